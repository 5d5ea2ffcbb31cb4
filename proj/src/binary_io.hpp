#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <vector>

#include "rast/error.hpp"

namespace rast::detail {

static_assert(std::endian::native == std::endian::little,
              "binary checkpoints assume a little-endian host");

template <typename T>
void write_binary(const std::filesystem::path& path, const T* data, std::size_t count) {
  std::ofstream out(path, std::ios::binary);
  RAST_REQUIRE(out.good(), ErrorCode::kIo, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * sizeof(T)));
  RAST_REQUIRE(out.good(), ErrorCode::kIo, "short write to " + path.string());
}

template <typename T>
std::vector<T> read_binary(const std::filesystem::path& path, std::size_t expected_count) {
  std::ifstream in(path, std::ios::binary);
  RAST_REQUIRE(in.good(), ErrorCode::kIo, "cannot open " + path.string());
  std::vector<T> out(expected_count);
  in.read(reinterpret_cast<char*>(out.data()),
          static_cast<std::streamsize>(expected_count * sizeof(T)));
  RAST_REQUIRE(static_cast<std::size_t>(in.gcount()) == expected_count * sizeof(T),
               ErrorCode::kIo, "truncated binary file " + path.string());
  in.peek();
  RAST_REQUIRE(in.eof(), ErrorCode::kIo, "trailing bytes in " + path.string());
  return out;
}

}  // namespace rast::detail
