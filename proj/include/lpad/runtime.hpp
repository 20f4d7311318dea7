#pragma once

namespace lpad {

/// Process setup for training binaries. Keeps freed large blocks in the heap
/// (training allocates the same activation sizes every step) and flushes
/// subnormal floats to zero on the calling thread; late in training tiny
/// gradients otherwise slow every multiply several times over.
void tune_runtime();

}  // namespace lpad
