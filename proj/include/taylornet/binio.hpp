// Little-endian POD read/write helpers shared by the binary file formats.
#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace taylornet::detail {

template <typename S>
void write_pod(std::ostream& out, S v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(S));
}

template <typename S>
S read_pod(std::istream& in) {
  S v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(S));
  if (!in) throw std::runtime_error("binary stream truncated");
  return v;
}

}  // namespace taylornet::detail
