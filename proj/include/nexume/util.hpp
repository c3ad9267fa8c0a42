/*
 * Copyright (c) 2026 nexume contributors.
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace nexume {

// CRC-32 (IEEE 802.3 polynomial, reflected).
uint32_t crc32(const uint8_t* data, size_t len);

std::string base64_encode(const uint8_t* data, size_t len);
std::vector<uint8_t> base64_decode(const std::string& text);

// Little-endian byte packing used by the checkpoint snapshot format and the
// model weight blobs.
void put_u16(std::vector<uint8_t>& out, uint16_t v);
void put_u32(std::vector<uint8_t>& out, uint32_t v);
void put_i16(std::vector<uint8_t>& out, int16_t v);
void put_i32(std::vector<uint8_t>& out, int32_t v);
void put_f64(std::vector<uint8_t>& out, double v);
void put_f32(std::vector<uint8_t>& out, float v);

class ByteReader {
public:
  ByteReader(const uint8_t* data, size_t len) : data_(data), len_(len) {}
  bool ok() const { return ok_; }
  size_t pos() const { return pos_; }
  size_t remaining() const { return ok_ ? len_ - pos_ : 0; }
  uint16_t u16();
  uint32_t u32();
  int16_t i16();
  int32_t i32();
  double f64();
  float f32();

private:
  bool take(size_t n, uint8_t* dst);
  const uint8_t* data_;
  size_t len_;
  size_t pos_ = 0;
  bool ok_ = true;
};

// Writes content to path via a temp file in the same directory plus rename,
// so readers never observe partial output.
void atomic_write_file(const std::string& path, const std::string& content);

std::string read_file(const std::string& path);

// round-half-to-even, independent of the FPU rounding mode.
double round_half_even(double x);

}  // namespace nexume
