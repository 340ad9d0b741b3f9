#include <cstdio>

int main() {
  std::fprintf(stderr, "moe-sim: not yet wired\n");
  return 1;
}
