#include <cstdio>

int main() {
  std::puts("sigmma: placeholder");
  return 0;
}
