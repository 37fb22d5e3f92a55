#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <openssl/evp.h>

namespace signkit {

// Schema identifiers for every file format the library reads or writes.
inline constexpr std::string_view kModelSchema = "signkit_model_v1";
inline constexpr std::string_view kKeymapSchema = "signkit_keymap_v1";
inline constexpr std::string_view kScheduleSchema = "signkit_schedule_v1";
inline constexpr std::string_view kFitResultSchema = "signkit_fit_v1";
inline constexpr std::string_view kFeatureSchema = "signkit_features_v1";
inline constexpr std::string_view kDatasetSchema = "signkit_dataset_v1";
inline constexpr std::string_view kCheckpointSchema = "signkit_checkpoint_v1";
inline constexpr std::string_view kTrainConfigSchema = "signkit_train_config_v1";
inline constexpr std::string_view kReportSchema = "signkit_report_v1";

enum class ErrorCode {
  InvalidArgument,
  DimensionMismatch,
  MissingArray,
  UnexpectedArray,
  SkinWeightsNotNormalized,
  RegressorNotNormalized,
  CyclicParent,
  BadPartition,
  SchemaMismatch,
  BehindCamera,
  NoPerson,
  Layout,
  SplitOverlap,
  FrameRange,
  EmptyInput,
  NonFinite,
  Io,
  Parse,
};

inline const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "invalid_argument";
    case ErrorCode::DimensionMismatch: return "dimension_mismatch";
    case ErrorCode::MissingArray: return "missing_array";
    case ErrorCode::UnexpectedArray: return "unexpected_array";
    case ErrorCode::SkinWeightsNotNormalized: return "skin_weights_not_normalized";
    case ErrorCode::RegressorNotNormalized: return "regressor_not_normalized";
    case ErrorCode::CyclicParent: return "cyclic_parent";
    case ErrorCode::BadPartition: return "bad_partition";
    case ErrorCode::SchemaMismatch: return "schema_mismatch";
    case ErrorCode::BehindCamera: return "behind_camera";
    case ErrorCode::NoPerson: return "no_person";
    case ErrorCode::Layout: return "layout";
    case ErrorCode::SplitOverlap: return "split_overlap";
    case ErrorCode::FrameRange: return "frame_range";
    case ErrorCode::EmptyInput: return "empty_input";
    case ErrorCode::NonFinite: return "non_finite";
    case ErrorCode::Io: return "io";
    case ErrorCode::Parse: return "parse";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Thrown by projection; carries the index of the first point with non-positive depth.
class BehindCameraError : public Error {
 public:
  explicit BehindCameraError(std::size_t index)
      : Error(ErrorCode::BehindCamera, "point " + std::to_string(index) + " has non-positive depth"),
        index_(index) {}

  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

inline void require(bool condition, ErrorCode code, const std::string& what) {
  if (!condition) throw Error(code, what);
}

namespace io {

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, std::string_view data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write '" + path + "'");
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw Error(ErrorCode::Io, "short write to '" + path + "'");
}

// Little-endian IEEE-754 binary64 packing.
inline std::string pack_f64_le(const double* values, std::size_t count) {
  std::string out(count * 8, '\0');
  for (std::size_t i = 0; i < count; ++i) {
    auto bits = std::bit_cast<std::uint64_t>(values[i]);
    for (int b = 0; b < 8; ++b) out[i * 8 + b] = static_cast<char>((bits >> (8 * b)) & 0xffu);
  }
  return out;
}

inline std::vector<double> unpack_f64_le(std::string_view bytes) {
  require(bytes.size() % 8 == 0, ErrorCode::Parse, "binary blob length not a multiple of 8");
  std::vector<double> out(bytes.size() / 8);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b)
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[i * 8 + b])) << (8 * b);
    out[i] = std::bit_cast<double>(bits);
  }
  return out;
}

inline std::string base64_encode(std::string_view bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(bytes.data()),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

inline std::string base64_decode(std::string_view text) {
  require(text.size() % 4 == 0, ErrorCode::Parse, "base64 length not a multiple of 4");
  std::string out(3 * (text.size() / 4), '\0');
  const int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(text.data()),
                                static_cast<int>(text.size()));
  require(n >= 0, ErrorCode::Parse, "malformed base64");
  // EVP_DecodeBlock keeps the zero bytes produced by '=' padding.
  std::size_t pad = 0;
  if (!text.empty() && text.back() == '=') ++pad;
  if (text.size() >= 2 && text[text.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

// Hex SHA-256 of the input.
inline std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr);
  std::ostringstream ss;
  for (unsigned int i = 0; i < len; ++i)
    ss << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  return ss.str();
}

}  // namespace io
}  // namespace signkit
