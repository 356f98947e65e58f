#pragma once

#include <cstdint>
#include <cstdlib>
#include <stdexcept>
#include <string>

namespace sparsekit {

enum class Precision { f32, f64 };

inline const char* to_string(Precision p) {
    return p == Precision::f32 ? "f32" : "f64";
}

// Sentinel for "no neighbor" entries in output-stationary maps.
inline constexpr int32_t kSentinel = -1;

// Thrown on malformed user input (bad files, bad shapes, invalid flags).
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Thrown when an operation is called outside its contract (internal misuse).
struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

struct ExecContext {
    int threads = 0;           // 0 = resolve from SPARSEKIT_THREADS / OpenMP default
    bool deterministic = false;
};

// Flag wins over environment, environment wins over the OpenMP default.
int resolve_threads(int requested);

}  // namespace sparsekit
