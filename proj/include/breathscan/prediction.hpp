#pragma once

#include <string>
#include <vector>

namespace breathscan {

// Frame-wise breath probabilities for one utterance; length equals the
// model-pipeline frame count exactly.
struct Prediction {
    std::vector<float> probs;
    std::string utterance_id;

    long size() const { return static_cast<long>(probs.size()); }
};

}  // namespace breathscan
