#include <malloc.h>

#include "xdg_cli/cli.hpp"

int main(int argc, char** argv) {
  // Large activations are freed and reallocated every step; keep them on the heap
  // instead of mapping fresh zeroed pages each time.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  return xdg::cli::run({argv + 1, argv + argc});
}
