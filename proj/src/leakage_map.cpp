/*
 * SPDX-License-Identifier: Apache-2.0
 *
 * This file is part of scamap, a location-based side-channel analysis toolkit.
 */

#include "scamap/leakage_map.hpp"

#include "scamap/error.hpp"

namespace scamap {

const char *modality_name(Modality m) {
    return m == Modality::Power ? "power" : "thermal";
}

Modality modality_from_name(const std::string &name) {
    if (name == "power")
        return Modality::Power;
    if (name == "thermal")
        return Modality::Thermal;
    throw Error::config("unknown modality '" + name + "' (expected power or thermal)");
}

} // namespace scamap
