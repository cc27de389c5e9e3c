#include <cstdio>

int main() {
  std::puts("pommix: subcommands not wired up yet");
  return 1;
}
