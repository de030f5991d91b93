#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "invpt/rng.hpp"
#include "invpt/tensor.hpp"

namespace invpt::data {

// One synthetic scene. All label maps render from the same geometry pass:
// boundary pixels are exactly the 4-neighbourhood class transitions of
// semseg, and depth is constant per shape, strictly ordered by draw order.
struct Sample {
    std::int64_t h = 0, w = 0;
    std::vector<double> image;         // (3,H,W) in [0,1]
    std::vector<std::uint16_t> semseg; // (H,W) class ids, 0 = background
    std::vector<double> depth;         // (H,W) in (0,1], background 1.0
    std::vector<std::uint8_t> boundary;// (H,W) binary

    bool operator==(const Sample& o) const = default;
};

struct SceneConfig {
    std::int64_t image_h = 32;
    std::int64_t image_w = 32;
    std::int64_t classes = 4;           // background + up to 3 shape classes
    std::int64_t shapes_per_scene = 3;  // drawn back-to-front at depths 0.9, 0.8, ...

    void validate() const;
};

// Pure function of (seed, index, cfg); identical arguments give bitwise
// identical samples.
Sample gen_sample(std::uint64_t seed, std::uint64_t index, const SceneConfig& cfg);

// MTSD container: magic "MTSD", u32 version=1, u32 count, then per sample
// u32 H, u32 W, image f64, semseg u16, depth f64, boundary u8. All integers
// and floats little-endian. Round trips are bitwise identities.
void write_dataset(const std::vector<Sample>& samples, const std::string& path);
std::vector<Sample> read_dataset(const std::string& path);

TensorPtr image_tensor(const Sample& s);

}  // namespace invpt::data
