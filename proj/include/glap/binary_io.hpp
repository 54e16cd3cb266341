#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <ostream>
#include <span>
#include <string>

namespace glap::io {

void write_u64_le(std::ostream& out, std::uint64_t value);
void write_f64_le(std::ostream& out, std::span<const double> values);
std::uint64_t read_u64_le(std::istream& in);
void read_f64_le(std::istream& in, std::span<double> values);

std::uint32_t read_u32_be(std::istream& in);
void write_u32_be(std::ostream& out, std::uint32_t value);

// Writes through a sibling temp file and renames it into place.
void atomic_write(const std::filesystem::path& path, const std::string& bytes);

}  // namespace glap::io
