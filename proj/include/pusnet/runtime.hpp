#pragma once

namespace pusnet {

/// Raises the glibc mmap and trim thresholds so large freed blocks stay in the
/// heap. No-op on other C libraries.
void retain_heap_memory();

}  // namespace pusnet
