#pragma once

#include <charconv>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace fedsn {

enum class CandidateKind { FullConv, AxisConv, PlanarConv, ResidualBlock, Identity };

/// One interchangeable block at a supernet slot.
///
/// FullConv(k) and ResidualBlock(k) convolve along every spatial axis with
/// extent k. AxisConv(a) has extent 3 along axis a only. PlanarConv(a) has
/// extent 3 along every axis except a (the "2D convolution" of a 3D menu).
struct Candidate {
  CandidateKind kind = CandidateKind::FullConv;
  std::size_t size = 3;
  std::size_t axis = 0;

  static Candidate full(std::size_t k) { return {CandidateKind::FullConv, k, 0}; }
  static Candidate along(std::size_t axis) { return {CandidateKind::AxisConv, 3, axis}; }
  static Candidate planar(std::size_t excluded_axis) { return {CandidateKind::PlanarConv, 3, excluded_axis}; }
  static Candidate residual(std::size_t k) { return {CandidateKind::ResidualBlock, k, 0}; }
  static Candidate identity() { return {CandidateKind::Identity, 0, 0}; }

  /// Identity and residual blocks add their input to their output.
  bool needs_matching_channels() const {
    return kind == CandidateKind::Identity || kind == CandidateKind::ResidualBlock;
  }

  std::string name() const {
    switch (kind) {
      case CandidateKind::FullConv: return "full" + std::to_string(size);
      case CandidateKind::AxisConv: return "axis" + std::to_string(axis);
      case CandidateKind::PlanarConv: return "planar" + std::to_string(axis);
      case CandidateKind::ResidualBlock: return "res" + std::to_string(size);
      case CandidateKind::Identity: return "identity";
    }
    return "?";
  }

  static Candidate parse(std::string_view s) {
    auto number = [&](std::string_view prefix) -> std::size_t {
      const std::string_view tail = s.substr(prefix.size());
      std::size_t v = 0;
      auto [ptr, ec] = std::from_chars(tail.data(), tail.data() + tail.size(), v);
      if (ec != std::errc{} || ptr != tail.data() + tail.size() || tail.empty()) {
        throw std::invalid_argument("bad candidate '" + std::string(s) + "'");
      }
      return v;
    };
    if (s == "identity") return identity();
    if (s.starts_with("full")) return full(number("full"));
    if (s.starts_with("axis")) return along(number("axis"));
    if (s.starts_with("planar")) return planar(number("planar"));
    if (s.starts_with("res")) return residual(number("res"));
    throw std::invalid_argument("unknown candidate '" + std::string(s) + "'");
  }

  bool operator==(const Candidate&) const = default;
};

using Menu = std::vector<Candidate>;

enum class SlotRole { Stem, Encoder, Bottleneck, Fusion, Decoder };

struct SlotSpec {
  std::string id;
  SlotRole role = SlotRole::Encoder;
  std::size_t level = 0;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  Menu candidates;
};

struct DecoderLevel {
  Menu fusion;
  std::vector<Menu> post;
};

/// Encoder-decoder supernet layout.
///
/// The stem maps input channels to `width`; every other block keeps `width`
/// channels except the decoder fusion slot, which consumes the upsampled
/// features concatenated with the encoder skip (2 x width). Encoder level l
/// runs its slots, stores the skip and downsamples; the bottleneck runs at
/// level levels-1; decoder level l upsamples, concatenates the level-l skip,
/// fuses and runs its post slots. A 1x1 head produces `classes` logits.
struct SupernetConfig {
  std::size_t spatial_rank = 2;
  std::size_t levels = 3;
  std::size_t in_channels = 1;
  std::size_t width = 8;
  std::size_t classes = 2;
  Menu stem;
  std::vector<std::vector<Menu>> encoder;  // [level][slot], levels - 1 entries
  std::vector<Menu> bottleneck;
  std::vector<DecoderLevel> decoder;  // [level], levels - 1 entries

  /// Slots in execution order; rejects invalid layouts.
  std::vector<SlotSpec> slots() const {
    if (spatial_rank != 2 && spatial_rank != 3) {
      throw std::invalid_argument("supernet config: spatial_rank must be 2 or 3");
    }
    if (levels < 1) throw std::invalid_argument("supernet config: levels must be >= 1");
    if (width < 1 || in_channels < 1) throw std::invalid_argument("supernet config: channel counts must be >= 1");
    if (classes < 2) throw std::invalid_argument("supernet config: classes must be >= 2");
    if (encoder.size() != levels - 1 || decoder.size() != levels - 1) {
      throw std::invalid_argument("supernet config: encoder and decoder need levels-1 = " +
                                  std::to_string(levels - 1) + " entries");
    }
    std::vector<SlotSpec> out;
    auto push = [&](std::string id, SlotRole role, std::size_t level, std::size_t in, const Menu& menu) {
      SlotSpec s{std::move(id), role, level, in, width, menu};
      validate_slot(s);
      out.push_back(std::move(s));
    };
    push("stem", SlotRole::Stem, 0, in_channels, stem);
    for (std::size_t l = 0; l + 1 < levels; ++l)
      for (std::size_t i = 0; i < encoder[l].size(); ++i)
        push("enc" + std::to_string(l) + "." + std::to_string(i), SlotRole::Encoder, l, width, encoder[l][i]);
    for (std::size_t i = 0; i < bottleneck.size(); ++i)
      push("bott." + std::to_string(i), SlotRole::Bottleneck, levels - 1, width, bottleneck[i]);
    for (std::size_t l = levels - 1; l-- > 0;) {
      push("fuse" + std::to_string(l), SlotRole::Fusion, l, 2 * width, decoder[l].fusion);
      for (std::size_t i = 0; i < decoder[l].post.size(); ++i)
        push("dec" + std::to_string(l) + "." + std::to_string(i), SlotRole::Decoder, l, width, decoder[l].post[i]);
    }
    return out;
  }

  /// Product of per-slot candidate counts; throws on overflow.
  std::uint64_t path_count() const {
    std::uint64_t n = 1;
    for (const auto& s : slots()) {
      const std::uint64_t k = s.candidates.size();
      if (n > std::numeric_limits<std::uint64_t>::max() / k) throw std::overflow_error("path count overflows");
      n *= k;
    }
    return n;
  }

  /// Same layout keeping only each slot's first candidate: the plain U-Net.
  SupernetConfig default_path_only() const {
    SupernetConfig c = *this;
    auto first = [](Menu& m) {
      if (!m.empty()) m.resize(1);
    };
    first(c.stem);
    for (auto& lvl : c.encoder)
      for (auto& m : lvl) first(m);
    for (auto& m : c.bottleneck) first(m);
    for (auto& d : c.decoder) {
      first(d.fusion);
      for (auto& m : d.post) first(m);
    }
    return c;
  }

  /// Smallest spatial extent divisor required of inputs.
  std::size_t spatial_divisor() const { return std::size_t{1} << (levels - 1); }

 private:
  void validate_slot(const SlotSpec& s) const {
    if (s.candidates.empty()) throw std::invalid_argument("slot " + s.id + ": empty candidate list");
    for (const auto& c : s.candidates) {
      if (c.needs_matching_channels() && s.in_channels != s.out_channels) {
        throw std::invalid_argument("slot " + s.id + ": candidate " + c.name() + " requires equal input/output channels (" +
                                    std::to_string(s.in_channels) + " -> " + std::to_string(s.out_channels) + ")");
      }
      switch (c.kind) {
        case CandidateKind::FullConv:
        case CandidateKind::ResidualBlock:
          if (c.size != 3 && c.size != 5 && c.size != 7) {
            throw std::invalid_argument("slot " + s.id + ": kernel size " + std::to_string(c.size) + " not in {3,5,7}");
          }
          break;
        case CandidateKind::AxisConv:
        case CandidateKind::PlanarConv:
          if (c.axis >= spatial_rank) {
            throw std::invalid_argument("slot " + s.id + ": axis " + std::to_string(c.axis) + " outside spatial rank " +
                                        std::to_string(spatial_rank));
          }
          break;
        case CandidateKind::Identity: break;
      }
    }
  }
};

/// 3 channel-changing slots with 3 candidates and 6 width-preserving slots
/// with 4 candidates: 3^3 * 4^6 = 110,592 paths. 3D by default.
inline SupernetConfig full_supernet_config(std::size_t spatial_rank = 3, std::size_t width = 8) {
  const std::size_t z = spatial_rank - 1;
  const Menu changing{Candidate::full(3), Candidate::full(5), Candidate::planar(z)};
  const Menu preserving{Candidate::full(3), Candidate::residual(3), Candidate::planar(z), Candidate::identity()};
  SupernetConfig c;
  c.spatial_rank = spatial_rank;
  c.levels = 3;
  c.width = width;
  c.stem = changing;
  c.encoder = {{preserving}, {preserving}};
  c.bottleneck = {preserving, preserving};
  c.decoder = {DecoderLevel{changing, {preserving}}, DecoderLevel{changing, {preserving}}};
  return c;
}

/// Small 2D layout with 64 paths for end-to-end runs and exhaustive search.
inline SupernetConfig desk_supernet_config(std::size_t width = 6) {
  SupernetConfig c;
  c.spatial_rank = 2;
  c.levels = 3;
  c.width = width;
  c.stem = {Candidate::full(3)};
  c.encoder = {{{Candidate::full(3), Candidate::residual(3)}}, {{Candidate::full(3), Candidate::full(5)}}};
  c.bottleneck = {{Candidate::full(3), Candidate::identity()}};
  c.decoder = {DecoderLevel{{Candidate::full(3), Candidate::along(1)}, {{Candidate::full(3)}}},
               DecoderLevel{{Candidate::full(3), Candidate::full(5)}, {{Candidate::full(3), Candidate::identity()}}}};
  return c;
}

// ---------------------------------------------------------------------------
// Structured text form

inline nlohmann::json menu_to_json(const Menu& m) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& c : m) j.push_back(c.name());
  return j;
}

inline Menu menu_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw std::invalid_argument("candidate menu must be an array of names");
  Menu m;
  for (const auto& e : j) m.push_back(Candidate::parse(e.get<std::string>()));
  return m;
}

inline nlohmann::json to_json(const SupernetConfig& c) {
  nlohmann::json j;
  j["spatial_rank"] = c.spatial_rank;
  j["levels"] = c.levels;
  j["in_channels"] = c.in_channels;
  j["width"] = c.width;
  j["classes"] = c.classes;
  j["stem"] = menu_to_json(c.stem);
  j["encoder"] = nlohmann::json::array();
  for (const auto& lvl : c.encoder) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& m : lvl) a.push_back(menu_to_json(m));
    j["encoder"].push_back(a);
  }
  j["bottleneck"] = nlohmann::json::array();
  for (const auto& m : c.bottleneck) j["bottleneck"].push_back(menu_to_json(m));
  j["decoder"] = nlohmann::json::array();
  for (const auto& d : c.decoder) {
    nlohmann::json e;
    e["fusion"] = menu_to_json(d.fusion);
    e["post"] = nlohmann::json::array();
    for (const auto& m : d.post) e["post"].push_back(menu_to_json(m));
    j["decoder"].push_back(e);
  }
  return j;
}

inline SupernetConfig supernet_config_from_json(const nlohmann::json& j) {
  SupernetConfig c;
  c.spatial_rank = j.value("spatial_rank", c.spatial_rank);
  c.levels = j.value("levels", c.levels);
  c.in_channels = j.value("in_channels", c.in_channels);
  c.width = j.value("width", c.width);
  c.classes = j.value("classes", c.classes);
  c.stem = menu_from_json(j.at("stem"));
  for (const auto& lvl : j.at("encoder")) {
    std::vector<Menu> slots;
    for (const auto& m : lvl) slots.push_back(menu_from_json(m));
    c.encoder.push_back(std::move(slots));
  }
  for (const auto& m : j.at("bottleneck")) c.bottleneck.push_back(menu_from_json(m));
  for (const auto& d : j.at("decoder")) {
    DecoderLevel lvl;
    lvl.fusion = menu_from_json(d.at("fusion"));
    for (const auto& m : d.at("post")) lvl.post.push_back(menu_from_json(m));
    c.decoder.push_back(std::move(lvl));
  }
  (void)c.slots();
  return c;
}

}  // namespace fedsn
