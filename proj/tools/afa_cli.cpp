// CLI front-end; subcommands are filled in as the library lands.
#include <cstdio>

int main() {
  std::fprintf(stderr, "usage: afa <gradcheck|ssr-scan|train|eval|render-attention> ...\n");
  return 2;
}
