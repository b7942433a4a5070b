// Sequence container on disk plus an importer for the standard public
// Moving-MNIST test archive (.npy, shape (20, N, 64, 64), uint8).
//
// Container layout ("TNSQ"):
//   magic "TNSQ" | u32 version = 1 | u8 dtype (1 = u8, 4 = f32) | u8 rank
//   u16 reserved | u32 dims[rank] (LE) | raw payload row-major
// A human-readable sidecar `<path>.meta` records provenance as key=value.
#pragma once

#include <cstring>
#include <fstream>

#include "taylornet/binio.hpp"
#include "taylornet/config.hpp"
#include "taylornet/data.hpp"

namespace taylornet {

inline void save_video_batch(const std::string& path, const VideoBatch& batch,
                             bool as_u8 = false) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write sequence file: " + path);
  out.write("TNSQ", 4);
  detail::write_pod<uint32_t>(out, 1);
  detail::write_pod<uint8_t>(out, as_u8 ? 1 : 4);
  detail::write_pod<uint8_t>(out, static_cast<uint8_t>(batch.frames.rank()));
  detail::write_pod<uint16_t>(out, 0);
  for (int d = 0; d < batch.frames.rank(); ++d)
    detail::write_pod<uint32_t>(out, batch.frames.dim(d));
  if (as_u8) {
    std::vector<unsigned char> buf(static_cast<size_t>(batch.frames.size()));
    for (int64_t i = 0; i < batch.frames.size(); ++i)
      buf[static_cast<size_t>(i)] =
          static_cast<unsigned char>(std::lround(std::clamp(batch.frames[i], 0.0f, 1.0f) * 255));
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  } else {
    out.write(reinterpret_cast<const char*>(batch.frames.data()),
              static_cast<std::streamsize>(batch.frames.size() * sizeof(float)));
  }
  if (!out) throw std::runtime_error("short write on sequence file: " + path);

  KeyValues meta;
  meta.set("source", batch.source);
  meta.set_int("seed", static_cast<int64_t>(batch.seed));
  meta.set("dtype", as_u8 ? "u8" : "f32");
  meta.set("layout", "batch,time,channel,height,width");
  meta.save(path + ".meta");
}

inline VideoBatch load_video_batch(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open sequence file: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "TNSQ", 4) != 0)
    throw std::runtime_error("not a sequence file: " + path);
  if (detail::read_pod<uint32_t>(in) != 1) throw std::runtime_error("unsupported sequence version");
  const uint8_t dtype = detail::read_pod<uint8_t>(in);
  const uint8_t rank = detail::read_pod<uint8_t>(in);
  detail::read_pod<uint16_t>(in);
  if (rank != 5) throw std::runtime_error("sequence file must be rank-5 (B,T,C,H,W)");
  Shape shape;
  for (int d = 0; d < rank; ++d) shape.push_back(static_cast<int>(detail::read_pod<uint32_t>(in)));
  VideoBatch out;
  out.source = path;
  out.frames = Tensor<float>(shape);
  const int64_t n = out.frames.size();
  if (dtype == 4) {
    in.read(reinterpret_cast<char*>(out.frames.data()), static_cast<std::streamsize>(n * 4));
  } else if (dtype == 1) {
    std::vector<unsigned char> buf(static_cast<size_t>(n));
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n));
    for (int64_t i = 0; i < n; ++i) out.frames[i] = buf[static_cast<size_t>(i)] / 255.0f;
  } else {
    throw std::runtime_error("sequence file has unsupported dtype");
  }
  if (!in) throw std::runtime_error("sequence file truncated: " + path);
  return out;
}

// Minimal .npy reader for the public Moving-MNIST test archive layout:
// uint8, C-order, shape (20, N, 64, 64). Returns (max_sequences, 20, 1, 64, 64).
inline VideoBatch import_moving_mnist_npy(const std::string& path, int max_sequences) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open npy archive: " + path);
  char magic[6];
  in.read(magic, 6);
  if (!in || std::memcmp(magic, "\x93NUMPY", 6) != 0)
    throw std::runtime_error("not a .npy file: " + path);
  const uint8_t major = detail::read_pod<uint8_t>(in);
  detail::read_pod<uint8_t>(in);
  uint32_t header_len = major >= 2 ? detail::read_pod<uint32_t>(in) : detail::read_pod<uint16_t>(in);
  std::string header(header_len, '\0');
  in.read(header.data(), header_len);
  if (!in) throw std::runtime_error("npy header truncated");

  if (header.find("'descr': '|u1'") == std::string::npos)
    throw std::runtime_error("npy archive must hold uint8 data, header: " + header);
  if (header.find("'fortran_order': False") == std::string::npos)
    throw std::runtime_error("npy archive must be C-ordered");
  const size_t sh = header.find("'shape': (");
  if (sh == std::string::npos) throw std::runtime_error("npy header has no shape");
  std::vector<int64_t> dims;
  size_t pos = sh + 10;
  while (pos < header.size() && header[pos] != ')') {
    while (pos < header.size() && !isdigit(header[pos]) && header[pos] != ')') ++pos;
    if (pos >= header.size() || header[pos] == ')') break;
    dims.push_back(std::stoll(header.substr(pos)));
    while (pos < header.size() && isdigit(header[pos])) ++pos;
  }
  if (dims.size() != 4 || dims[0] != 20 || dims[2] != 64 || dims[3] != 64)
    throw std::runtime_error("npy archive is not the (20, N, 64, 64) Moving-MNIST layout");

  const int n = std::min<int>(static_cast<int>(dims[1]), max_sequences);
  VideoBatch out;
  out.source = path;
  out.frames = Tensor<float>(Shape{n, 20, 1, 64, 64});
  std::vector<unsigned char> row(64 * 64);
  for (int t = 0; t < 20; ++t) {
    for (int64_t s = 0; s < dims[1]; ++s) {
      in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
      if (!in) throw std::runtime_error("npy archive truncated");
      if (s < n)
        for (int i = 0; i < 64 * 64; ++i)
          out.frames[((int64_t(s) * 20 + t) * 64 * 64) + i] = row[static_cast<size_t>(i)] / 255.0f;
    }
  }
  return out;
}

}  // namespace taylornet
