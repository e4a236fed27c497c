#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "spcv/netdef.hpp"

namespace spcv {

class ModelIoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
/// File does not start with the "SPCV" magic.
class BadMagicError : public ModelIoError {
public:
    using ModelIoError::ModelIoError;
};
/// Format version newer than this reader understands.
class UnsupportedVersionError : public ModelIoError {
public:
    using ModelIoError::ModelIoError;
};
/// File ends before the advertised structure does.
class TruncatedError : public ModelIoError {
public:
    using ModelIoError::ModelIoError;
};
/// Trailing CRC-32 does not match the file body.
class ChecksumError : public ModelIoError {
public:
    using ModelIoError::ModelIoError;
};
/// Structurally parseable but semantically inconsistent model.
class ModelFormatError : public ModelIoError {
public:
    using ModelIoError::ModelIoError;
};
/// Dense dump rejected during conversion.
class ConvertError : public ModelIoError {
public:
    using ModelIoError::ModelIoError;
};

inline constexpr std::uint16_t kModelFormatVersion = 1;

/// Serialized layout: "SPCV" magic, u16 version, network descriptor, layer
/// records, trailing CRC-32 of all preceding bytes. Little-endian; arrays
/// u32-length-prefixed. Byte-deterministic for identical inputs.
std::vector<std::uint8_t> serialize_model(const NetworkSpec& net, const WeightSet& ws);
void save_model(const NetworkSpec& net, const WeightSet& ws, const std::string& path);

/// Parses and fully revalidates; throws the error classes above. Never
/// trusts a length field beyond the bytes actually present.
std::pair<NetworkSpec, WeightSet> parse_model(const std::uint8_t* data, std::size_t size);
std::pair<NetworkSpec, WeightSet> load_model(const std::string& path);

/// Flat little-endian f32 dump of dense weights plus a text manifest (arch
/// header lines, then one line per tensor: name followed by its dims).
void write_dense_dump(const NetworkSpec& net, const WeightSet& ws,
                      const std::string& dump_path, const std::string& manifest_path);

enum class ConvertMode {
    MaskFromValues,  // keep the dump's exact zeros (pre-pruned dumps)
    MagnitudePrune,  // apply magnitude pruning at plan.sparsity
};

/// Reads a dense dump + manifest, applies the plan's blocking, and returns
/// an inference-ready model. In MaskFromValues mode the zeros must already
/// agree with the plan's block structure.
std::pair<NetworkSpec, WeightSet> convert_dense_dump(const std::string& dump_path,
                                                     const std::string& manifest_path,
                                                     const SparsityPlan& plan,
                                                     ConvertMode mode);

}  // namespace spcv
