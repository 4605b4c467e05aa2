#pragma once

// Binary weight container. Layout (all integers little-endian):
//   magic "SSRCKPT1"
//   u32 tensor count
//   per tensor, in registration order:
//     u32 name length, name bytes (UTF-8)
//     u32 rank, rank x u32 extents
//     float32 payload, row-major
// The writer emits registration order, so identical (model, seed, steps)
// produce byte-identical files. The reader validates everything and reports
// the byte offset of the first violation.

#include "ssr/transformer.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace ssr {

inline constexpr char kCheckpointMagic[8] = {'S', 'S', 'R', 'C',
                                             'K', 'P', 'T', '1'};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline void put_f32(std::string& out, float v) {
  put_u32(out, std::bit_cast<std::uint32_t>(v));
}

class ByteReader {
 public:
  ByteReader(std::string data, std::string what)
      : data_(std::move(data)), what_(std::move(what)) {}

  std::size_t pos() const { return pos_; }
  bool exhausted() const { return pos_ == data_.size(); }

  void expect_magic(const char* magic, std::size_t n) {
    need(n, "magic");
    if (std::memcmp(data_.data(), magic, n) != 0)
      throw FormatError(what_ + ": bad magic at byte 0");
    pos_ += n;
  }

  std::uint32_t u32(const char* field) {
    need(4, field);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(
               static_cast<unsigned char>(data_[pos_ + i]))
           << (8 * i);
    pos_ += 4;
    return v;
  }

  float f32(const char* field) {
    return std::bit_cast<float>(u32(field));
  }

  std::string bytes(std::size_t n, const char* field) {
    need(n, field);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw FormatError(what_ + ": " + msg + " at byte " + std::to_string(pos_));
  }

 private:
  void need(std::size_t n, const char* field) const {
    if (pos_ + n > data_.size())
      throw FormatError(what_ + ": truncated while reading " + field +
                        " at byte " + std::to_string(pos_));
  }

  std::string data_;
  std::string what_;
  std::size_t pos_ = 0;
};

inline std::string read_file_bytes(const std::string& path,
                                   const char* kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw MissingArtifactError(std::string(kind) + " not readable: " + path);
  std::string data((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return data;
}

inline void write_file_bytes(const std::string& path,
                             const std::string& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open for writing: " + path);
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw Error("short write: " + path);
}

}  // namespace detail

template <class S>
std::string serialize_checkpoint(const ParamSet<S>& params) {
  std::string out;
  out.append(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, v] : params) {
    detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.append(name);
    std::vector<std::uint32_t> extents;
    if (v->rank == 1) {
      extents = {static_cast<std::uint32_t>(v->value.size())};
    } else if (v->rank == 2) {
      extents = {static_cast<std::uint32_t>(v->rows()),
                 static_cast<std::uint32_t>(v->cols())};
    } else if (v->rank != 0) {
      throw ContractError("serialize_checkpoint: unsupported rank " +
                          std::to_string(v->rank) + " for tensor " + name);
    }
    detail::put_u32(out, static_cast<std::uint32_t>(extents.size()));
    for (auto e : extents) detail::put_u32(out, e);
    for (Eigen::Index r = 0; r < v->rows(); ++r)
      for (Eigen::Index c = 0; c < v->cols(); ++c)
        detail::put_f32(out, static_cast<float>(v->value(r, c)));
  }
  return out;
}

template <class S>
void save_checkpoint(const std::string& path, const ParamSet<S>& params) {
  detail::write_file_bytes(path, serialize_checkpoint(params));
}

// Loads values into an existing parameter set; names, order, ranks and
// extents must match the registration exactly.
template <class S>
void load_checkpoint(const std::string& path, const ParamSet<S>& params) {
  detail::ByteReader r(detail::read_file_bytes(path, "checkpoint"),
                       "checkpoint " + path);
  r.expect_magic(kCheckpointMagic, sizeof(kCheckpointMagic));
  const std::uint32_t count = r.u32("tensor count");
  if (count != params.size())
    r.fail("holds " + std::to_string(count) + " tensors, model registers " +
           std::to_string(params.size()));
  for (const auto& [name, v] : params) {
    const std::uint32_t name_len = r.u32("name length");
    const std::string got = r.bytes(name_len, "tensor name");
    if (got != name)
      r.fail("tensor name '" + got + "' does not match registered '" + name +
             "'");
    const std::uint32_t rank = r.u32("rank");
    std::vector<std::uint32_t> extents(rank);
    for (auto& e : extents) e = r.u32("extent");
    Eigen::Index rows = 1, cols = 1;
    if (rank == 1) {
      cols = extents[0];
    } else if (rank == 2) {
      rows = extents[0];
      cols = extents[1];
    } else if (rank != 0) {
      r.fail("tensor '" + name + "' has unsupported rank " +
             std::to_string(rank));
    }
    if (static_cast<std::uint32_t>(rank) != static_cast<std::uint32_t>(v->rank))
      r.fail("tensor '" + name + "' has rank " + std::to_string(rank) +
             ", model expects " + std::to_string(v->rank));
    if (rows != v->rows() || cols != v->cols())
      r.fail("tensor '" + name + "' has extents " + shape_str(rows, cols) +
             ", model expects " + v->shape());
    for (Eigen::Index rr = 0; rr < rows; ++rr)
      for (Eigen::Index cc = 0; cc < cols; ++cc)
        v->value(rr, cc) = static_cast<S>(r.f32("payload"));
  }
  if (!r.exhausted()) r.fail("trailing bytes after last tensor");
}

}  // namespace ssr
