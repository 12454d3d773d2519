// Copyright 2026 The MDF Authors
// SPDX-License-Identifier: Apache-2.0

#include "mdf/error.hpp"

#include <cstdio>
#include <vector>

namespace mdf {

namespace {

std::string vformat(const char* fmt, va_list ap) {
  va_list ap2;
  va_copy(ap2, ap);
  int size = std::vsnprintf(nullptr, 0, fmt, ap);
  std::vector<char> buf(static_cast<std::size_t>(size) + 1);
  std::vsnprintf(buf.data(), buf.size(), fmt, ap2);
  va_end(ap2);
  return std::string(buf.data(), static_cast<std::size_t>(size));
}

}  // namespace

std::string strprintf(const char* fmt, ...) {
  va_list ap;
  va_start(ap, fmt);
  std::string s = vformat(fmt, ap);
  va_end(ap);
  return s;
}

void fail(ErrorCode code, const char* fmt, ...) {
  va_list ap;
  va_start(ap, fmt);
  std::string s = vformat(fmt, ap);
  va_end(ap);
  throw Error(code, s);
}

}  // namespace mdf
