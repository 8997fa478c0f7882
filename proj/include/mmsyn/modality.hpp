#pragma once

#include <array>
#include <string>
#include <string_view>

namespace mmsyn {

// Canonical channel order. Do not reorder: checkpoints and manifests rely on it.
enum class Modality : int { T1 = 0, T1CE = 1, T2 = 2, FLAIR = 3 };

inline constexpr std::array<Modality, 4> kAllModalities = {Modality::T1, Modality::T1CE,
                                                          Modality::T2, Modality::FLAIR};

// File tag used in `<subject>_<tag>.nii.gz`: "T1", "T1CE", "T2", "FLAIR".
std::string_view modality_tag(Modality m);
// Display name used in report tables: "T1", "T1-ce", "T2", "FLAIR".
std::string_view modality_display(Modality m);
// Case-insensitive; accepts "t1ce", "t1-ce", "t1c" for T1CE. Throws ConfigError.
Modality parse_modality(std::string_view text);

inline int index_of(Modality m) { return static_cast<int>(m); }

// One missing-modality situation: the target to synthesize and the three
// available sources in canonical order.
struct MissingScenario {
    Modality target = Modality::FLAIR;
    std::array<Modality, 3> sources{Modality::T1, Modality::T1CE, Modality::T2};

    static MissingScenario for_target(Modality target);
    std::string tag() const { return std::string(modality_tag(target)); }

    friend bool operator==(const MissingScenario&, const MissingScenario&) = default;
};

}  // namespace mmsyn
