// Copyright 2026 The MDF Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdarg>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace mdf {

// Mirrors mdf_status in mdf.h; values must stay in sync.
enum class ErrorCode : int {
  invalid_argument = 1,
  io = 2,
  format = 3,
  shape = 4,
  range = 5,
  evaluator = 6,
  internal = 7,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

#if defined(__GNUC__)
#define MDF_PRINTF_LIKE(a, b) __attribute__((format(printf, a, b)))
#else
#define MDF_PRINTF_LIKE(a, b)
#endif

std::string strprintf(const char* fmt, ...) MDF_PRINTF_LIKE(1, 2);

[[noreturn]] void fail(ErrorCode code, const char* fmt, ...) MDF_PRINTF_LIKE(2, 3);

}  // namespace mdf
