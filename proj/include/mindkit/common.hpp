#pragma once

#include <atomic>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace mindkit {

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// tensor / autodiff
struct ShapeMismatch : Error { using Error::Error; };
struct NonFinite : Error { using Error::Error; };
struct NotScalarLoss : Error { using Error::Error; };
struct MissingGradient : Error { using Error::Error; };

// diffusion
struct BadRange : Error { using Error::Error; };
struct StepOutOfRange : Error { using Error::Error; };
struct EmptyDataset : Error { using Error::Error; };

// autoencoder / encoders
struct BadResolution : Error { using Error::Error; };
struct OutOfRange : Error { using Error::Error; };
struct UnknownToken : Error { using Error::Error; };
struct TooLong : Error { using Error::Error; };
struct BatchTooSmall : Error { using Error::Error; };

// neurosim
struct StaleFeatureCache : Error { using Error::Error; };
struct IOFailure : Error { using Error::Error; };

// decode
struct SingularSystem : Error { using Error::Error; };
struct DimensionMismatch : Error { using Error::Error; };
struct TooFewSamples : Error { using Error::Error; };
struct BadFraction : Error { using Error::Error; };

// reconstruct
struct TapMismatch : Error { using Error::Error; };
struct ModelMissing : Error { using Error::Error; };
struct DecoderMissing : Error { using Error::Error; };
struct EmptyAfterFilter : Error { using Error::Error; };

// orchestration
struct DatasetMissing : Error { using Error::Error; };
struct UpstreamMissing : Error { using Error::Error; };

// Strict non-finite checking at op boundaries. Off by default; tests turn it
// on via StrictGuard. Training loops leave it off.
inline std::atomic<bool>& strict_mode() {
    static std::atomic<bool> flag{false};
    return flag;
}

struct StrictGuard {
    bool prev;
    explicit StrictGuard(bool on = true) : prev(strict_mode().load()) { strict_mode().store(on); }
    ~StrictGuard() { strict_mode().store(prev); }
};

}  // namespace mindkit
