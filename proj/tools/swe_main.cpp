#include <cstdio>

int main() {
  std::puts("swe: CLI under construction");
  return 0;
}
