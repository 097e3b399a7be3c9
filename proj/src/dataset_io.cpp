#include <cmath>
#include <fstream>
#include <iterator>

#include "binary_io.hpp"
#include "hssal/error.hpp"
#include "hssal/harness.hpp"

namespace hssal {

namespace io {

std::vector<char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(ParseError::Kind::kIo, "cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ParseError(ParseError::Kind::kIo, "cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ParseError(ParseError::Kind::kIo, "short write to '" + path + "'");
}

}  // namespace io

namespace harness {

namespace {
constexpr char kMagic[] = "HSSF";
}

void save_features(const std::string& path, const Dataset& data) {
  const auto& x = data.features.matrix();
  HSSAL_REQUIRE(data.labels.size() == data.features.rows(), "label count does not match feature rows");
  io::ByteWriter w;
  w.raw(std::string_view(kMagic, 4));
  w.uint<std::uint16_t>(kFeatureFileVersion);
  w.uint<std::uint64_t>(data.features.rows());
  w.uint<std::uint64_t>(data.features.dim());
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(data.labels.num_classes()));
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    for (Eigen::Index c = 0; c < x.cols(); ++c) w.f32(static_cast<float>(x(r, c)));
  }
  for (Label l : data.labels.values()) w.uint<std::uint32_t>(l);
  io::write_file(path, w.bytes());
}

Dataset load_features(const std::string& path) {
  const std::vector<char> bytes = io::read_file(path);
  io::ByteReader r(bytes, path);
  if (bytes.size() < 4 || r.raw(4) != std::string_view(kMagic, 4)) {
    throw ParseError(ParseError::Kind::kBadMagic, path + ": bad magic, not a feature file");
  }
  const auto version = r.uint<std::uint16_t>();
  if (version != kFeatureFileVersion) {
    throw ParseError(ParseError::Kind::kBadVersion, path + ": unsupported feature file version " + std::to_string(version));
  }
  const auto n = r.uint<std::uint64_t>();
  const auto d = r.uint<std::uint64_t>();
  const auto c = r.uint<std::uint32_t>();
  if (n == 0 || d == 0 || c < 2) {
    throw ParseError(ParseError::Kind::kInvalidValue, path + ": header needs N >= 1, D >= 1, C >= 2");
  }
  // Guard the multiplication before allocating.
  if (d > (std::uint64_t{1} << 32) || n > (std::uint64_t{1} << 40) / d) {
    throw ParseError(ParseError::Kind::kInvalidValue, path + ": implausible header dimensions");
  }
  const std::uint64_t payload = n * d * 4 + n * 4;
  if (r.remaining() < payload) {
    throw ParseError(ParseError::Kind::kTruncated, path + ": truncated payload, missing " +
                                                       std::to_string(payload - r.remaining()) + " bytes");
  }
  RowMatrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (std::uint64_t i = 0; i < n; ++i) {
    for (std::uint64_t j = 0; j < d; ++j) {
      const float v = r.f32();
      if (!std::isfinite(v)) {
        throw ParseError(ParseError::Kind::kInvalidValue,
                         path + ": non-finite feature value in row " + std::to_string(i) + ", column " + std::to_string(j));
      }
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
    }
  }
  std::vector<Label> labels(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    labels[i] = r.uint<std::uint32_t>();
    if (labels[i] >= c) {
      throw ParseError(ParseError::Kind::kInvalidLabel, path + ": label " + std::to_string(labels[i]) + " in row " +
                                                            std::to_string(i) + " is not below C=" + std::to_string(c));
    }
  }
  if (r.remaining() != 0) {
    throw ParseError(ParseError::Kind::kInvalidValue, path + ": " + std::to_string(r.remaining()) + " trailing bytes");
  }
  return {FeatureMatrix(std::move(x)), LabelVector(std::move(labels), c)};
}

}  // namespace harness
}  // namespace hssal
