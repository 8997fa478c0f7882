#include "mmsyn/modality.hpp"

#include <algorithm>
#include <cctype>

#include "mmsyn/errors.hpp"

namespace mmsyn {

std::string_view modality_tag(Modality m) {
    switch (m) {
        case Modality::T1: return "T1";
        case Modality::T1CE: return "T1CE";
        case Modality::T2: return "T2";
        case Modality::FLAIR: return "FLAIR";
    }
    return "?";
}

std::string_view modality_display(Modality m) {
    return m == Modality::T1CE ? std::string_view("T1-ce") : modality_tag(m);
}

Modality parse_modality(std::string_view text) {
    std::string s;
    for (char c : text) {
        if (c != '-' && c != '_') s.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
    }
    if (s == "T1") return Modality::T1;
    if (s == "T1CE" || s == "T1C" || s == "T1GD") return Modality::T1CE;
    if (s == "T2") return Modality::T2;
    if (s == "FLAIR" || s == "T2FLAIR") return Modality::FLAIR;
    throw ConfigError("unknown modality '" + std::string(text) + "' (expected one of T1, T1CE, T2, FLAIR)");
}

MissingScenario MissingScenario::for_target(Modality target) {
    MissingScenario s;
    s.target = target;
    std::size_t n = 0;
    for (Modality m : kAllModalities) {
        if (m != target) s.sources[n++] = m;
    }
    return s;
}

}  // namespace mmsyn
