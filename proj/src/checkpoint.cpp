#include "invpt/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <vector>

#include <json.hpp>

namespace invpt {

namespace {

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f64(std::string& out, double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, 8);
    put_u64(out, bits);
}

std::uint64_t get_u64(const std::string& buf, std::size_t off) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[off + i])) << (8 * i);
    return v;
}

double get_f64(const std::string& buf, std::size_t off) {
    const std::uint64_t bits = get_u64(buf, off);
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
}

}  // namespace

void save_checkpoint(const ParamStore& params, const std::string& path) {
    nlohmann::ordered_json manifest;
    manifest["format"] = "invpt-checkpoint";
    manifest["version"] = 1;
    auto& tensors = manifest["tensors"] = nlohmann::ordered_json::array();
    std::uint64_t offset = 0;
    for (const auto& e : params.entries()) {
        nlohmann::ordered_json t;
        t["name"] = e.name;
        t["shape"] = e.tensor->shape;
        t["offset"] = offset;
        tensors.push_back(std::move(t));
        offset += static_cast<std::uint64_t>(e.tensor->numel()) * 8;
    }
    const std::string mjson = manifest.dump();

    std::string out;
    out.reserve(8 + mjson.size() + offset);
    put_u64(out, mjson.size());
    out += mjson;
    for (const auto& e : params.entries())
        for (double v : e.tensor->data) put_f64(out, v);

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open checkpoint for writing: " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw DataError("short write to checkpoint: " + path);
}

void load_checkpoint(ParamStore& params, const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open checkpoint: " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    if (buf.size() < 8) throw DataError("truncated checkpoint header", buf.size());
    const std::uint64_t mlen = get_u64(buf, 0);
    if (8 + mlen > buf.size()) throw DataError("truncated checkpoint manifest", buf.size());
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(buf.substr(8, mlen));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("bad checkpoint manifest: ") + e.what(), 8);
    }
    if (manifest.value("format", "") != "invpt-checkpoint")
        throw DataError("not an invpt checkpoint", 8);
    if (manifest.value("version", 0) != 1)
        throw DataError("unsupported checkpoint version", 8);

    const std::size_t payload = 8 + mlen;
    std::size_t matched = 0;
    for (const auto& t : manifest.at("tensors")) {
        const std::string name = t.at("name");
        const Shape shape = t.at("shape").get<Shape>();
        const std::uint64_t offset = t.at("offset");
        auto dst = params.find(name);
        if (!dst) throw DataError("checkpoint tensor has no destination: " + name);
        if (dst->shape != shape)
            throw DataError("shape mismatch for " + name + ": checkpoint " + shape_str(shape) +
                            " vs model " + shape_str(dst->shape));
        const std::size_t begin = payload + offset;
        const std::size_t bytes = static_cast<std::size_t>(dst->numel()) * 8;
        if (begin + bytes > buf.size())
            throw DataError("truncated payload for " + name, static_cast<long long>(buf.size()));
        for (std::int64_t i = 0; i < dst->numel(); ++i)
            dst->data[static_cast<std::size_t>(i)] = get_f64(buf, begin + 8 * i);
        ++matched;
    }
    if (matched != params.entries().size())
        throw DataError("checkpoint covers " + std::to_string(matched) + " of " +
                        std::to_string(params.entries().size()) + " model tensors");
}

}  // namespace invpt
