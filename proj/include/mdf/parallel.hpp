// Copyright 2026 The MDF Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>

namespace mdf {

// 0 means "use all logical cores".
unsigned resolve_jobs(unsigned jobs);

// Runs fn(i) for i in [0, n) on up to `jobs` threads. Every index runs exactly
// once; callers write results into slot i so output order is schedule-independent.
// The first exception thrown by any job is rethrown after all workers join.
void parallel_for(std::size_t n, unsigned jobs, const std::function<void(std::size_t)>& fn);

}  // namespace mdf
