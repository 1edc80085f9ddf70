#pragma once

// Little-endian primitives shared by the FSDS / FSNW / FSCP containers.

#include <array>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string_view>
#include <vector>

#include "facesearch/common.hpp"

namespace facesearch::io {

void write_magic(std::ostream& out, std::string_view magic);
void expect_magic(std::istream& in, std::string_view magic);

void write_u8(std::ostream& out, std::uint8_t v);
void write_u32(std::ostream& out, std::uint32_t v);
void write_u64(std::ostream& out, std::uint64_t v);
void write_f64(std::ostream& out, double v);

std::uint8_t read_u8(std::istream& in);
std::uint32_t read_u32(std::istream& in);
std::uint64_t read_u64(std::istream& in);
double read_f64(std::istream& in);

void write_matrix(std::ostream& out, const Matrix& m);
// Reads rows*cols doubles into a freshly sized matrix.
Matrix read_matrix(std::istream& in, std::uint64_t rows, std::uint64_t cols);

// Matrix with its own (rows, cols) header.
void write_sized_matrix(std::ostream& out, const Matrix& m);
Matrix read_sized_matrix(std::istream& in);

}  // namespace facesearch::io
