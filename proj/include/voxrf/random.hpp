#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace voxrf {

// Deterministic random stream. Normal variates use Box-Muller on top of
// mt19937_64 uniforms instead of std::normal_distribution, whose output is
// implementation-defined; this keeps artifacts bit-reproducible across
// standard libraries.
class RandomStream {
 public:
  explicit RandomStream(uint64_t seed = 0) : engine_(seed) {}

  double uniform() {
    // in (0,1]; never 0 so log() below is safe
    return (static_cast<double>(engine_() >> 11) + 1.0) * (1.0 / 9007199254740992.0);
  }

  // uniform integer in [0, n)
  uint64_t uniform_int(uint64_t n) {
    // rejection sampling to avoid modulo bias
    uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t v;
    do {
      v = engine_();
    } while (v >= limit);
    return v % n;
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  std::string save_state() const {
    std::ostringstream os;
    os << engine_ << " " << (has_spare_ ? 1 : 0);
    if (has_spare_) os << " " << std::hexfloat << spare_;
    return os.str();
  }

  void load_state(const std::string& s) {
    std::istringstream is(s);
    is >> engine_;
    int flag = 0;
    is >> flag;
    has_spare_ = flag != 0;
    if (has_spare_) is >> std::hexfloat >> spare_;
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace voxrf
