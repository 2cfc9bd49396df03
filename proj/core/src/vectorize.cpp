#include "backscan/vectorize.hpp"

#include <sstream>

namespace backscan {

std::string_view to_string(Interpretation interp) {
    return interp == Interpretation::forward ? "forward" : "backward";
}

Interpretation interpretation_from_string(std::string_view s) {
    if (s == "forward") return Interpretation::forward;
    if (s == "backward") return Interpretation::backward;
    throw ValidationError("unknown interpretation: " + std::string(s));
}

FeatureVectorSet vectorize_matrix(const WeightTensor& tensor, Interpretation interp,
                                  std::string_view network_id) {
    if (tensor.shape.size() != 2) {
        throw ValidationError("vectorize_matrix: tensor '" + tensor.name + "' has " +
                              std::to_string(tensor.shape.size()) + " dimensions, expected 2");
    }
    const std::size_t rows = static_cast<std::size_t>(tensor.shape[0]);
    const std::size_t cols = static_cast<std::size_t>(tensor.shape[1]);

    FeatureVectorSet set;
    set.source = {std::string(network_id), tensor.name, interp};
    if (interp == Interpretation::forward) {
        set.dim = rows;
        set.vectors.resize(cols);
        for (std::size_t j = 0; j < cols; ++j) {
            auto& v = set.vectors[j];
            v.resize(rows);
            for (std::size_t i = 0; i < rows; ++i) v[i] = tensor.data[i * cols + j];
        }
    } else {
        set.dim = cols;
        set.vectors.resize(rows);
        for (std::size_t i = 0; i < rows; ++i) {
            auto& v = set.vectors[i];
            v.assign(tensor.data.begin() + static_cast<std::ptrdiff_t>(i * cols),
                     tensor.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * cols));
        }
    }
    return set;
}

FeatureVectorSet vectorize_conv(const WeightTensor& tensor, std::string_view network_id) {
    if (tensor.shape.size() != 4) {
        throw ValidationError("vectorize_conv: tensor '" + tensor.name + "' has " +
                              std::to_string(tensor.shape.size()) + " dimensions, expected 4");
    }
    const std::size_t out_filters = static_cast<std::size_t>(tensor.shape[0]);
    const std::size_t filter_len = static_cast<std::size_t>(tensor.shape[1] * tensor.shape[2] * tensor.shape[3]);

    FeatureVectorSet set;
    set.source = {std::string(network_id), tensor.name, Interpretation::forward};
    set.dim = filter_len;
    set.vectors.resize(out_filters);
    for (std::size_t o = 0; o < out_filters; ++o) {
        set.vectors[o].assign(tensor.data.begin() + static_cast<std::ptrdiff_t>(o * filter_len),
                              tensor.data.begin() + static_cast<std::ptrdiff_t>((o + 1) * filter_len));
    }
    return set;
}

FeatureVectorSet vectorize_layer(const WeightTensor& tensor, Interpretation interp,
                                 std::string_view network_id) {
    if (tensor.shape.size() == 2) return vectorize_matrix(tensor, interp, network_id);
    if (tensor.shape.size() == 4) return vectorize_conv(tensor, network_id);
    throw ValidationError("layer '" + tensor.name + "' has " +
                          std::to_string(tensor.shape.size()) +
                          " dimensions; only 2-D and 4-D tensors can be vectorized");
}

FeatureVectorSet stack_corpus(std::span<const FeatureVectorSet> sets) {
    if (sets.empty()) throw ValidationError("stack_corpus: no sets given");

    FeatureVectorSet stacked;
    stacked.dim = sets.front().dim;
    stacked.source = sets.front().source;
    stacked.source.network_id.clear();  // aggregate of many networks

    std::size_t total = 0;
    for (const FeatureVectorSet& s : sets) total += s.size();
    stacked.vectors.reserve(total);

    for (const FeatureVectorSet& s : sets) {
        if (s.dim != stacked.dim) {
            std::ostringstream msg;
            msg << "stack_corpus: network '" << s.source.network_id << "' has vector dim "
                << s.dim << ", expected " << stacked.dim;
            throw ValidationError(msg.str());
        }
        if (s.source.interpretation != stacked.source.interpretation) {
            throw ValidationError("stack_corpus: mixed interpretations in network '" +
                                  s.source.network_id + "'");
        }
        stacked.vectors.insert(stacked.vectors.end(), s.vectors.begin(), s.vectors.end());
    }
    return stacked;
}

}  // namespace backscan
