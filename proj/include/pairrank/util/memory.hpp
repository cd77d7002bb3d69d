#pragma once

namespace pairrank {

/// Keeps large freed buffers in the heap instead of returning them to the OS,
/// which avoids repeated page faults for the per-step activation buffers.
void tune_allocator();

}  // namespace pairrank
