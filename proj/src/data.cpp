#include "invpt/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "invpt/error.hpp"

namespace invpt::data {

void SceneConfig::validate() const {
    if (image_h < 8 || image_w < 8) throw ConfigError("scene extents must be >= 8");
    if (classes < 3 || classes > 4)
        throw ConfigError("scene classes must be 3 or 4 (background + shape kinds), got " +
                          std::to_string(classes));
    if (shapes_per_scene < 0 || shapes_per_scene > 8)
        throw ConfigError("shapes per scene must be in [0,8] so per-shape depths stay positive");
}

namespace {

// Base colors per class; shapes are shaded by their depth so the depth task
// is learnable from the image alone.
constexpr double kPalette[4][3] = {
    {0.15, 0.15, 0.20},  // background
    {0.85, 0.25, 0.20},  // rectangle
    {0.20, 0.75, 0.30},  // disk
    {0.25, 0.35, 0.90},  // triangle
};

struct Shape {
    std::int64_t cls = 1;
    double depth = 0.9;
    // rectangle: bounds; disk: center+radius; triangle: apex-up isoceles.
    std::int64_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;
    double cx = 0, cy = 0, r = 0;

    bool contains(std::int64_t x, std::int64_t y) const {
        switch (cls) {
            case 1:
                return x >= x0 && x <= x1 && y >= y0 && y <= y1;
            case 2: {
                const double dx = static_cast<double>(x) - cx;
                const double dy = static_cast<double>(y) - cy;
                return dx * dx + dy * dy <= r * r;
            }
            default: {
                if (y < y0 || y > y1) return false;
                const double t = static_cast<double>(y - y0) / static_cast<double>(y1 - y0);
                const double half = t * r;
                return std::fabs(static_cast<double>(x) - cx) <= half;
            }
        }
    }
};

}  // namespace

Sample gen_sample(std::uint64_t seed, std::uint64_t index, const SceneConfig& cfg) {
    cfg.validate();
    Rng rng = Rng::for_index(seed, index);
    const std::int64_t h = cfg.image_h, w = cfg.image_w;

    std::vector<Shape> shapes;
    for (std::int64_t i = 0; i < cfg.shapes_per_scene; ++i) {
        Shape s;
        s.cls = 1 + static_cast<std::int64_t>(rng.next_below(cfg.classes - 1));
        s.depth = 0.9 - 0.1 * static_cast<double>(i);
        const std::int64_t min_ext = 4;
        const std::int64_t max_ext = std::min(h, w) / 2;
        if (s.cls == 1) {
            const std::int64_t sw = min_ext + rng.next_below(max_ext - min_ext + 1);
            const std::int64_t sh = min_ext + rng.next_below(max_ext - min_ext + 1);
            s.x0 = static_cast<std::int64_t>(rng.next_below(w - sw));
            s.y0 = static_cast<std::int64_t>(rng.next_below(h - sh));
            s.x1 = s.x0 + sw - 1;
            s.y1 = s.y0 + sh - 1;
        } else if (s.cls == 2) {
            s.r = static_cast<double>(min_ext / 2 + 1 + rng.next_below(max_ext / 2));
            s.cx = s.r + rng.uniform() * (static_cast<double>(w) - 2.0 * s.r - 1.0);
            s.cy = s.r + rng.uniform() * (static_cast<double>(h) - 2.0 * s.r - 1.0);
        } else {
            const std::int64_t sh = min_ext + rng.next_below(max_ext - min_ext + 1);
            s.r = static_cast<double>(min_ext / 2 + 1 + rng.next_below(max_ext / 2));
            s.y0 = static_cast<std::int64_t>(rng.next_below(h - sh));
            s.y1 = s.y0 + sh - 1;
            s.cx = s.r + rng.uniform() * (static_cast<double>(w) - 2.0 * s.r - 1.0);
        }
        shapes.push_back(s);
    }

    Sample out;
    out.h = h;
    out.w = w;
    out.semseg.assign(h * w, 0);
    out.depth.assign(h * w, 1.0);
    out.boundary.assign(h * w, 0);
    out.image.assign(3 * h * w, 0.0);

    // Painter's algorithm: later (shallower) shapes overwrite earlier ones.
    for (const auto& s : shapes)
        for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t x = 0; x < w; ++x)
                if (s.contains(x, y)) {
                    out.semseg[y * w + x] = static_cast<std::uint16_t>(s.cls);
                    out.depth[y * w + x] = s.depth;
                }

    for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x) {
            const std::uint16_t c = out.semseg[y * w + x];
            const bool edge = (x > 0 && out.semseg[y * w + x - 1] != c) ||
                              (x + 1 < w && out.semseg[y * w + x + 1] != c) ||
                              (y > 0 && out.semseg[(y - 1) * w + x] != c) ||
                              (y + 1 < h && out.semseg[(y + 1) * w + x] != c);
            out.boundary[y * w + x] = edge ? 1 : 0;
        }

    for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x) {
            const std::int64_t p = y * w + x;
            const double shade = 0.5 + 0.5 * out.depth[p];
            for (std::int64_t ch = 0; ch < 3; ++ch) {
                const double noise = (rng.uniform() - 0.5) * 0.08;
                out.image[ch * h * w + p] =
                    std::clamp(kPalette[out.semseg[p]][ch] * shade + noise, 0.0, 1.0);
            }
        }
    return out;
}

namespace {

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f64(std::string& out, double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, 8);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;

    void need(std::size_t n, const char* what) const {
        if (pos + n > buf.size())
            throw DataError(std::string("truncated ") + what, static_cast<long long>(pos));
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint16_t u16(const char* what) {
        need(2, what);
        std::uint16_t v = static_cast<std::uint16_t>(
            static_cast<unsigned char>(buf[pos]) |
            (static_cast<std::uint16_t>(static_cast<unsigned char>(buf[pos + 1])) << 8));
        pos += 2;
        return v;
    }
    double f64(const char* what) {
        need(8, what);
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i)
            bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i]))
                    << (8 * i);
        pos += 8;
        double d;
        std::memcpy(&d, &bits, 8);
        return d;
    }
    std::uint8_t u8(const char* what) {
        need(1, what);
        return static_cast<std::uint8_t>(buf[pos++]);
    }
};

}  // namespace

void write_dataset(const std::vector<Sample>& samples, const std::string& path) {
    std::string out = "MTSD";
    put_u32(out, 1);
    put_u32(out, static_cast<std::uint32_t>(samples.size()));
    for (const auto& s : samples) {
        put_u32(out, static_cast<std::uint32_t>(s.h));
        put_u32(out, static_cast<std::uint32_t>(s.w));
        for (double v : s.image) put_f64(out, v);
        for (std::uint16_t v : s.semseg) {
            out.push_back(static_cast<char>(v & 0xFF));
            out.push_back(static_cast<char>((v >> 8) & 0xFF));
        }
        for (double v : s.depth) put_f64(out, v);
        for (std::uint8_t v : s.boundary) out.push_back(static_cast<char>(v));
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open dataset for writing: " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw DataError("short write to dataset: " + path);
}

std::vector<Sample> read_dataset(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open dataset: " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    Reader r{buf};
    r.need(4, "magic");
    if (buf.compare(0, 4, "MTSD") != 0) throw DataError("bad magic, expected MTSD", 0);
    r.pos = 4;
    const std::uint32_t version = r.u32("version");
    if (version != 1)
        throw DataError("unsupported version " + std::to_string(version), 4);
    const std::uint32_t count = r.u32("sample count");
    std::vector<Sample> samples;
    samples.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        Sample s;
        s.h = r.u32("sample height");
        s.w = r.u32("sample width");
        if (s.h == 0 || s.w == 0 || s.h > 1 << 20 || s.w > 1 << 20)
            throw DataError("implausible sample extents", static_cast<long long>(r.pos) - 8);
        const std::int64_t hw = s.h * s.w;
        s.image.resize(3 * hw);
        for (auto& v : s.image) v = r.f64("image payload");
        s.semseg.resize(hw);
        for (auto& v : s.semseg) v = r.u16("semseg payload");
        s.depth.resize(hw);
        for (auto& v : s.depth) v = r.f64("depth payload");
        s.boundary.resize(hw);
        for (auto& v : s.boundary) v = r.u8("boundary payload");
        samples.push_back(std::move(s));
    }
    return samples;
}

TensorPtr image_tensor(const Sample& s) {
    return Tensor::from({3, s.h, s.w}, s.image);
}

}  // namespace invpt::data
