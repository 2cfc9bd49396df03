#include "backscan/weightstore.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace backscan {

namespace {

constexpr char kMagic[4] = {'W', 'S', 'C', '1'};
constexpr std::uint16_t kVersion = 1;
// Sanity cap so corrupt dim fields cannot trigger huge allocations.
constexpr std::uint64_t kMaxElements = 1ULL << 32;

void write_bytes(std::ostream& out, const void* p, std::size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!out) throw IoError("write failed");
}

template <typename T>
void write_le(std::ostream& out, T value) {
    static_assert(std::is_integral_v<T>);
    unsigned char buf[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        buf[i] = static_cast<unsigned char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff);
    }
    write_bytes(out, buf, sizeof(T));
}

void write_sized_string(std::ostream& out, const std::string& s, const char* what) {
    if (s.size() > std::numeric_limits<std::uint16_t>::max()) {
        throw ValidationError(std::string(what) + " exceeds 65535 bytes");
    }
    write_le<std::uint16_t>(out, static_cast<std::uint16_t>(s.size()));
    write_bytes(out, s.data(), s.size());
}

void read_bytes(std::istream& in, void* p, std::size_t n) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n) throw FormatError("truncated payload");
}

template <typename T>
T read_le(std::istream& in) {
    static_assert(std::is_integral_v<T>);
    unsigned char buf[sizeof(T)];
    read_bytes(in, buf, sizeof(T));
    std::uint64_t value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        value |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    }
    return static_cast<T>(value);
}

std::string read_sized_string(std::istream& in) {
    const auto len = read_le<std::uint16_t>(in);
    std::string s(len, '\0');
    read_bytes(in, s.data(), len);
    return s;
}

bool representable_as_f32(double v) {
    const float narrowed = static_cast<float>(v);
    return std::bit_cast<std::uint64_t>(static_cast<double>(narrowed)) ==
           std::bit_cast<std::uint64_t>(v);
}

}  // namespace

std::string_view to_string(Label label) {
    return label == Label::clean ? "clean" : "backdoored";
}

Label label_from_string(std::string_view s) {
    if (s == "clean") return Label::clean;
    if (s == "backdoored") return Label::backdoored;
    throw ValidationError("unknown label: " + std::string(s));
}

std::uint64_t WeightTensor::element_count() const {
    std::uint64_t n = 1;
    for (std::uint64_t d : shape) n *= d;
    return n;
}

void validate(const NetworkRecord& record) {
    if (record.tensors.empty()) throw ValidationError("tensors non-empty");
    if (record.label == Label::clean && record.metadata.contains(kPoisonSpecIdKey)) {
        throw ValidationError("clean record must not carry metadata key '" +
                              std::string(kPoisonSpecIdKey) + "'");
    }
    std::set<std::string> names;
    for (const WeightTensor& t : record.tensors) {
        if (t.shape.empty()) throw ValidationError("tensor '" + t.name + "': shape has no dimensions");
        std::uint64_t n = 1;
        for (std::uint64_t d : t.shape) {
            if (d == 0) throw ValidationError("tensor '" + t.name + "': zero-sized dimension");
            if (n > kMaxElements / d) throw ValidationError("tensor '" + t.name + "': element count overflow");
            n *= d;
        }
        if (t.data.size() != n) {
            std::ostringstream msg;
            msg << "tensor '" << t.name << "': data length " << t.data.size()
                << " does not match shape product " << n;
            throw ValidationError(msg.str());
        }
        if (!names.insert(t.name).second) {
            throw ValidationError("duplicate tensor name '" + t.name + "'");
        }
        if (t.dtype == Dtype::f32) {
            for (double v : t.data) {
                if (!representable_as_f32(v)) {
                    throw ValidationError("tensor '" + t.name +
                                          "': f32 dtype but data not representable in f32");
                }
            }
        }
    }
}

void write_container(const std::filesystem::path& path, const NetworkRecord& record) {
    validate(record);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());

    write_bytes(out, kMagic, sizeof(kMagic));
    write_le<std::uint16_t>(out, kVersion);
    write_le<std::uint8_t>(out, static_cast<std::uint8_t>(record.label));
    write_sized_string(out, record.network_id, "network_id");

    if (record.metadata.size() > std::numeric_limits<std::uint16_t>::max()) {
        throw ValidationError("metadata entry count exceeds 65535");
    }
    write_le<std::uint16_t>(out, static_cast<std::uint16_t>(record.metadata.size()));
    for (const auto& [key, value] : record.metadata) {
        write_sized_string(out, key, "metadata key");
        write_sized_string(out, value, "metadata value");
    }

    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(record.tensors.size()));
    for (const WeightTensor& t : record.tensors) {
        write_sized_string(out, t.name, "tensor name");
        write_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.dtype));
        if (t.shape.size() > 255) throw ValidationError("tensor '" + t.name + "': too many dimensions");
        write_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.shape.size()));
        for (std::uint64_t d : t.shape) write_le<std::uint64_t>(out, d);
        if (t.dtype == Dtype::f64) {
            for (double v : t.data) write_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
        } else {
            for (double v : t.data) {
                write_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
            }
        }
    }
    out.flush();
    if (!out) throw IoError("write failed: " + path.string());
}

NetworkRecord read_container(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path.string());

    char magic[4];
    read_bytes(in, magic, sizeof(magic));
    if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw FormatError("bad magic");
    const auto version = read_le<std::uint16_t>(in);
    if (version != kVersion) {
        throw FormatError("unsupported version " + std::to_string(version));
    }

    NetworkRecord record;
    const auto label_byte = read_le<std::uint8_t>(in);
    if (label_byte > 1) throw FormatError("invalid label byte");
    record.label = static_cast<Label>(label_byte);
    record.network_id = read_sized_string(in);

    const auto n_meta = read_le<std::uint16_t>(in);
    for (std::uint16_t i = 0; i < n_meta; ++i) {
        std::string key = read_sized_string(in);
        std::string value = read_sized_string(in);
        record.metadata.emplace(std::move(key), std::move(value));
    }

    const auto n_tensors = read_le<std::uint32_t>(in);
    record.tensors.reserve(n_tensors);
    for (std::uint32_t i = 0; i < n_tensors; ++i) {
        WeightTensor t;
        t.name = read_sized_string(in);
        const auto dtype_byte = read_le<std::uint8_t>(in);
        if (dtype_byte > 1) throw FormatError("invalid dtype byte");
        t.dtype = static_cast<Dtype>(dtype_byte);
        const auto ndim = read_le<std::uint8_t>(in);
        if (ndim == 0) throw FormatError("tensor with zero dimensions");
        std::uint64_t n = 1;
        t.shape.resize(ndim);
        for (std::uint8_t d = 0; d < ndim; ++d) {
            t.shape[d] = read_le<std::uint64_t>(in);
            if (t.shape[d] == 0) throw FormatError("zero-sized dimension");
            if (n > kMaxElements / t.shape[d]) throw FormatError("shape/data-length mismatch");
            n *= t.shape[d];
        }
        t.data.resize(n);
        if (t.dtype == Dtype::f64) {
            for (std::uint64_t k = 0; k < n; ++k) {
                t.data[k] = std::bit_cast<double>(read_le<std::uint64_t>(in));
            }
        } else {
            for (std::uint64_t k = 0; k < n; ++k) {
                t.data[k] = static_cast<double>(std::bit_cast<float>(read_le<std::uint32_t>(in)));
            }
        }
        record.tensors.push_back(std::move(t));
    }
    validate(record);
    return record;
}

const WeightTensor& select_layer(const NetworkRecord& record, std::string_view name) {
    for (const WeightTensor& t : record.tensors) {
        if (t.name == name) return t;
    }
    std::ostringstream msg;
    msg << "unknown layer '" << name << "'; available: {";
    for (std::size_t i = 0; i < record.tensors.size(); ++i) {
        if (i > 0) msg << ", ";
        msg << "\"" << record.tensors[i].name << "\"";
    }
    msg << "}";
    throw ValidationError(msg.str());
}

}  // namespace backscan
