// Copyright (c) 2026, the beat authors
// SPDX-License-Identifier: Apache-2.0

#include "beat/core.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace beat {

void parallel_for(int n, Exec mode, const std::function<void(int)>& body) {
#ifdef _OPENMP
    if (mode == Exec::parallel) {
#pragma omp parallel for schedule(dynamic)
        for (int i = 0; i < n; ++i) body(i);
        return;
    }
#else
    (void)mode;
#endif
    for (int i = 0; i < n; ++i) body(i);
}

}  // namespace beat
