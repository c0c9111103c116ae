#include "restok/layout.hpp"

#include <algorithm>

#include "restok/errors.hpp"

RESTOK_BEGIN_NAMESPACE

const char* group_kind_name(GroupKind kind) {
  switch (kind) {
    case GroupKind::ImageScale: return "image-scale";
    case GroupKind::LatentLevel: return "latent-level";
    case GroupKind::Class: return "class";
    case GroupKind::Ntp: return "ntp";
    case GroupKind::HarGroup: return "har-group";
    case GroupKind::MaskSlot: return "mask-slot";
  }
  return "?";
}

int TokenLayout::group_of(int token) const {
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (token >= groups[g].offset && token < groups[g].offset + groups[g].size) {
      return static_cast<int>(g);
    }
  }
  throw GeometryError("token " + std::to_string(token) + " outside layout");
}

namespace {

void append_image_positions(PositionTriples& out, GridShape g, int& next) {
  const int t = next;
  int max_id = t;
  for (int y = 0; y < g.h; ++y) {
    for (int x = 0; x < g.w; ++x) out.push_back({t, y, x});
  }
  max_id = std::max({max_id, g.h - 1, g.w - 1});
  next = max_id + 1;
}

void append_text_positions(PositionTriples& out, int count, int& next) {
  for (int i = 0; i < count; ++i) {
    out.push_back({next, next, next});
    ++next;
  }
}

}  // namespace

PositionTriples mrope_positions(RopeMode mode, const std::vector<GridShape>& image_shapes,
                                int latent_total) {
  PositionTriples out;
  int next = 0;
  if (mode == RopeMode::Encoder) {
    for (const auto& g : image_shapes) append_image_positions(out, g, next);
    append_text_positions(out, latent_total, next);
  } else {
    append_text_positions(out, latent_total, next);
    for (const auto& g : image_shapes) append_image_positions(out, g, next);
  }
  return out;
}

TokenLayout encoder_layout(const ScalePyramid& pyramid, int present_scales,
                           const LevelSchedule& schedule) {
  const int S = pyramid.count();
  if (present_scales < 1 || present_scales > S) {
    throw GeometryError("encoder_layout: " + std::to_string(present_scales) +
                        " present scales outside [1, " + std::to_string(S) + "]");
  }
  TokenLayout layout;
  const PositionTriples all = mrope_positions(RopeMode::Encoder, pyramid.scales, schedule.total());
  std::vector<int> scale_start(static_cast<std::size_t>(S) + 1, 0);
  for (int s = 0; s < S; ++s) scale_start[s + 1] = scale_start[s] + pyramid.scales[s].size();

  int offset = 0;
  const int first = S - present_scales;
  for (int s = first; s < S; ++s) {
    const int n = pyramid.scales[static_cast<std::size_t>(s)].size();
    layout.groups.push_back({GroupKind::ImageScale, s, offset, n});
    for (int i = 0; i < n; ++i) layout.positions.push_back(all[scale_start[s] + i]);
    offset += n;
  }
  for (int l = 0; l < schedule.count(); ++l) {
    const int n = schedule.sizes[static_cast<std::size_t>(l)];
    layout.groups.push_back({GroupKind::LatentLevel, l, offset, n});
    offset += n;
  }
  for (int i = 0; i < schedule.total(); ++i) layout.positions.push_back(all[scale_start[S] + i]);
  if (offset == 0) throw GeometryError("encoder_layout: empty layout");

  auto mask = std::make_shared<BoolMatrix>(offset, offset);
  for (const auto& rg : layout.groups) {
    for (const auto& cg : layout.groups) {
      bool allow = false;
      if (rg.kind == GroupKind::ImageScale) {
        allow = cg.kind == GroupKind::ImageScale && cg.index <= rg.index;
      } else {
        allow = cg.kind == GroupKind::ImageScale || cg.index <= rg.index;
      }
      if (!allow) continue;
      for (int r = 0; r < rg.size; ++r) {
        for (int c = 0; c < cg.size; ++c) mask->set(rg.offset + r, cg.offset + c, true);
      }
    }
  }
  layout.mask = std::move(mask);
  return layout;
}

TokenLayout decoder_layout(GridShape grid, int keep_len, int latent_total) {
  if (keep_len < 0 || keep_len > latent_total || grid.size() <= 0) {
    throw GeometryError("decoder_layout: invalid prefix or grid");
  }
  TokenLayout layout;
  const PositionTriples all = mrope_positions(RopeMode::Decoder, {grid}, latent_total);
  if (keep_len > 0) layout.groups.push_back({GroupKind::LatentLevel, 0, 0, keep_len});
  layout.groups.push_back({GroupKind::MaskSlot, 0, keep_len, grid.size()});
  for (int i = 0; i < keep_len; ++i) layout.positions.push_back(all[i]);
  for (int i = 0; i < grid.size(); ++i) layout.positions.push_back(all[latent_total + i]);
  const int n = keep_len + grid.size();
  layout.mask = std::make_shared<BoolMatrix>(n, n, true);
  return layout;
}

TokenLayout generator_layout(int ntp_len, const std::vector<int>& group_sizes) {
  if (ntp_len < 0) throw GeometryError("generator_layout: negative NTP length");
  for (int g : group_sizes) {
    if (g <= 0) throw GeometryError("generator_layout: empty HAR group");
  }
  TokenLayout layout;
  layout.groups.push_back({GroupKind::Class, 0, 0, 1});
  int offset = 1;
  if (ntp_len > 0) {
    layout.groups.push_back({GroupKind::Ntp, 0, offset, ntp_len});
    offset += ntp_len;
  }
  for (std::size_t g = 0; g < group_sizes.size(); ++g) {
    layout.groups.push_back({GroupKind::HarGroup, static_cast<int>(g), offset, group_sizes[g]});
    offset += group_sizes[g];
  }
  auto mask = std::make_shared<BoolMatrix>(offset, offset);
  for (const auto& grp : layout.groups) {
    for (int r = grp.offset; r < grp.offset + grp.size; ++r) {
      // Token-causal inside class/NTP; whole-block inside a HAR group.
      const int last = grp.kind == GroupKind::HarGroup ? grp.offset + grp.size - 1 : r;
      for (int c = 0; c <= last; ++c) mask->set(r, c, true);
    }
  }
  for (int i = 0; i < offset; ++i) layout.positions.push_back({i, i, i});
  layout.mask = std::move(mask);
  return layout;
}

void write_mask(std::ostream& os, const BoolMatrix& mask, MaskFormat format) {
  for (int r = 0; r < mask.rows(); ++r) {
    for (int c = 0; c < mask.cols(); ++c) {
      if (format == MaskFormat::Csv) {
        if (c) os << ',';
        os << (mask(r, c) ? 1 : 0);
      } else {
        os << (mask(r, c) ? '#' : '.');
      }
    }
    os << '\n';
  }
}

RESTOK_END_NAMESPACE
