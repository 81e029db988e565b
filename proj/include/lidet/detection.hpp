#pragma once

#include <vector>

#include "lidet/box.hpp"

namespace lidet {

struct Detection {
    Box3D box;
    double score = 0.0;
    int query_index = -1;
};

// Final scored boxes after top-k selection; no NMS is ever applied.
struct DetectionSet {
    std::vector<Detection> dets;
};

} // namespace lidet
