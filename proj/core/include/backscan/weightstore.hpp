#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "backscan/errors.hpp"

namespace backscan {

enum class Dtype : std::uint8_t { f32 = 0, f64 = 1 };
enum class Label : std::uint8_t { clean = 0, backdoored = 1 };

std::string_view to_string(Label label);
Label label_from_string(std::string_view s);

// One layer's parameters: named, shaped, row-major. Values are held as
// doubles regardless of storage dtype; f32 tensors are widened on read
// and must be exactly representable in f32 when written.
struct WeightTensor {
    std::string name;
    Dtype dtype = Dtype::f64;
    std::vector<std::uint64_t> shape;
    std::vector<double> data;

    std::uint64_t element_count() const;
    // Row-major element of a 2-D tensor.
    double at2d(std::uint64_t row, std::uint64_t col) const {
        return data[row * shape[1] + col];
    }
};

// Metadata key reserved for backdoored runs; clean records must not carry it.
inline constexpr const char* kPoisonSpecIdKey = "poison_spec_id";

struct NetworkRecord {
    std::string network_id;
    Label label = Label::clean;
    std::vector<WeightTensor> tensors;
    std::map<std::string, std::string> metadata;
};

// Throws ValidationError naming the offending field.
void validate(const NetworkRecord& record);

// Container format "WSC1": see docs/FORMAT notes in README. Writes are
// deterministic: equal records produce byte-identical files.
void write_container(const std::filesystem::path& path, const NetworkRecord& record);
NetworkRecord read_container(const std::filesystem::path& path);

// Returns the named tensor; unknown names raise an error listing the
// available tensor names.
const WeightTensor& select_layer(const NetworkRecord& record, std::string_view name);

}  // namespace backscan
