#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "backscan/weightstore.hpp"

namespace backscan {

// How an R x C weight matrix is read as a bag of vectors:
//   forward  -> C vectors of length R (one per column),
//   backward -> R vectors of length C (one per row).
enum class Interpretation { forward, backward };

std::string_view to_string(Interpretation interp);
Interpretation interpretation_from_string(std::string_view s);

struct FeatureSource {
    std::string network_id;
    std::string layer_name;
    Interpretation interpretation = Interpretation::forward;
};

// Order-free multiset of equal-length vectors. Consumers must not depend
// on the order of `vectors`; detector scores are permutation invariant.
struct FeatureVectorSet {
    std::size_t dim = 0;
    std::vector<std::vector<double>> vectors;
    FeatureSource source;

    std::size_t size() const { return vectors.size(); }
};

FeatureVectorSet vectorize_matrix(const WeightTensor& tensor, Interpretation interp,
                                  std::string_view network_id = {});

// O x I x Kh x Kw convolution kernels: one row-major flattened vector per
// output filter, length I*Kh*Kw. Independent of interpretation.
FeatureVectorSet vectorize_conv(const WeightTensor& tensor, std::string_view network_id = {});

// Dispatch on tensor rank (2-D matrix / 4-D conv); anything else is rejected.
FeatureVectorSet vectorize_layer(const WeightTensor& tensor, Interpretation interp,
                                 std::string_view network_id = {});

// Concatenates the multisets of M networks; all sets must share dim and
// interpretation. Dim mismatches are reported with the offending network id.
FeatureVectorSet stack_corpus(std::span<const FeatureVectorSet> sets);

}  // namespace backscan
