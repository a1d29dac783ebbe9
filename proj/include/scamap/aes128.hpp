/*
 * SPDX-License-Identifier: Apache-2.0
 *
 * This file is part of scamap, a location-based side-channel analysis toolkit.
 */

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

// First-round AES-128 operations. Profiled attacks in this toolkit target the
// output of the first SubBytes layer, so AddRoundKey + SubBytes per byte is
// all that is needed: labels for training, hypothesis classes for key ranking.

namespace scamap::aes {

using KeyBytes = std::array<std::uint8_t, 16>;
using PlaintextBytes = std::array<std::uint8_t, 16>;
using LabelBytes = std::array<std::uint8_t, 16>;

/// The AES forward substitution box.
extern const std::array<std::uint8_t, 256> kSbox;

inline std::uint8_t sbox(std::uint8_t v) { return kSbox[v]; }

/// First-round SubBytes output: label[b] = sbox(pt[b] ^ key[b]).
LabelBytes first_round_labels(const PlaintextBytes &pt, const KeyBytes &key);

/// Class a key guess predicts for one trace byte. Equals the true label
/// when the guess is the true key byte.
inline std::uint8_t hypothesis_class(std::uint8_t pt_byte, std::uint8_t key_guess) {
    return sbox(static_cast<std::uint8_t>(pt_byte ^ key_guess));
}

inline int hamming_weight(std::uint8_t v) { return __builtin_popcount(v); }

/// The fixed key used by default throughout: {0x00, 0x11, ..., 0xFF}.
KeyBytes default_key();

KeyBytes key_from_hex(std::string_view hex); // throws Error::config on bad input
std::string key_to_hex(const KeyBytes &key);

} // namespace scamap::aes
