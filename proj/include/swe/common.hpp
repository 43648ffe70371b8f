#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace swe {

// Error taxonomy. CLI maps ConfigError/GeometryError/DataError to exit code 1
// (validation) and everything else to exit code 2 (runtime).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct GeometryError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct CoverageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct EstimateError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Seed scoping: derive independent stream seeds from a base seed without
// correlated low bits (splitmix64 finalizer).
inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Portable RNG helpers. std::normal_distribution is implementation-defined,
// so gaussians are generated by Box-Muller from mt19937_64 uniforms to keep
// byte-identical streams across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  double uniform() {  // [0, 1)
    return (eng_() >> 11) * 0x1.0p-53;
  }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {  // inclusive
    return lo + static_cast<std::int64_t>(uniform() * double(hi - lo + 1));
  }
  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }
  std::mt19937_64& engine() { return eng_; }

  std::string state_string() const {
    std::ostringstream os;
    os << eng_;
    std::string s = os.str();
    if (have_spare_) s += " S" + std::to_string(spare_);
    return s;
  }
  void restore_state(const std::string& s) {
    std::istringstream is(s);
    is >> eng_;
    auto pos = s.find(" S");
    have_spare_ = pos != std::string::npos;
    if (have_spare_) spare_ = std::stod(s.substr(pos + 2));
  }

 private:
  std::mt19937_64 eng_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// FNV-1a 64-bit, used for weight freeze checks and content fingerprints.
inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
  auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

// Flat little-endian float32 binaries; the on-disk tensor format.
inline void write_f32(const std::string& path, const std::vector<float>& v) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open for write: " + path);
  f.write(reinterpret_cast<const char*>(v.data()),
          static_cast<std::streamsize>(v.size() * sizeof(float)));
  if (!f) throw DataError("short write: " + path);
}

inline std::vector<float> read_f32(const std::string& path,
                                   std::size_t expected_count) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw DataError("cannot open: " + path);
  auto bytes = static_cast<std::size_t>(f.tellg());
  if (bytes != expected_count * sizeof(float))
    throw DataError("size mismatch in " + path + ": got " +
                    std::to_string(bytes) + " bytes, expected " +
                    std::to_string(expected_count * sizeof(float)));
  std::vector<float> v(expected_count);
  f.seekg(0);
  f.read(reinterpret_cast<char*>(v.data()),
         static_cast<std::streamsize>(bytes));
  return v;
}

}  // namespace swe
