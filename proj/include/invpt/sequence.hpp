#pragma once

#include <cstdint>

#include "invpt/tensor.hpp"

namespace invpt {

// Multi-task token sequence: T per-task flattened feature maps stacked along
// the row axis, task 0 first, rows in raster order within a task.
struct MultiTaskSequence {
    TensorPtr tokens;  // (T*H*W, C)
    std::int64_t tasks = 0;
    std::int64_t h = 0;
    std::int64_t w = 0;
    std::int64_t c = 0;

    static MultiTaskSequence wrap(TensorPtr tokens, std::int64_t tasks, std::int64_t h,
                                  std::int64_t w);
    std::vector<TensorPtr> task_slices() const;  // T tensors of (H*W, C)
};

// (H*W, C) tokens <-> (C, H, W) map, raster row order.
TensorPtr tokens_to_map(const TensorPtr& tokens, std::int64_t h, std::int64_t w);
TensorPtr map_to_tokens(const TensorPtr& map);

}  // namespace invpt
