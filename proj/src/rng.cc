#include "pvmlab/rng.h"

namespace pvmlab {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t Rng::derive_seed(std::uint64_t root_seed, std::string_view name) {
  std::uint64_t h = splitmix64(root_seed);
  for (unsigned char c : name) h = splitmix64(h ^ c);
  return h;
}

Rng Rng::stream(std::uint64_t root_seed, std::string_view name) {
  return Rng(derive_seed(root_seed, name));
}

}  // namespace pvmlab
