#pragma once

#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "restok/geometry.hpp"
#include "restok/mask.hpp"

RESTOK_BEGIN_NAMESPACE

enum class GroupKind { ImageScale, LatentLevel, Class, Ntp, HarGroup, MaskSlot };

const char* group_kind_name(GroupKind kind);

struct TokenGroup {
  GroupKind kind;
  int index = 0;   // scale / level / group number within its kind
  int offset = 0;  // first token of the group in the sequence
  int size = 0;
};

struct TokenLayout {
  std::vector<TokenGroup> groups;
  PositionTriples positions;
  std::shared_ptr<const BoolMatrix> mask;

  int total() const { return mask ? mask->rows() : 0; }
  int group_of(int token) const;
};

enum class RopeMode { Encoder, Decoder };

// Rotary ids. Latent tokens count like text, (k, k, k); an image scale gets
// one shared t offset and its grid coordinates as (t, y, x). Each group starts
// one past the largest id used before it. Encoder order: image scales coarse
// to fine, then latents. Decoder order: latents, then image grids.
PositionTriples mrope_positions(RopeMode mode, const std::vector<GridShape>& image_shapes,
                                int latent_total);

// Encoder sequence with the finest `present_scales` scales of the pyramid
// (coarsest present first) followed by every latent level. Image scale s
// attends image scales <= s only; latent level l attends all present image
// tokens and latent levels <= l; image tokens never attend latents.
TokenLayout encoder_layout(const ScalePyramid& pyramid, int present_scales,
                           const LevelSchedule& schedule);

// Decoder sequence: `keep_len` latent tokens then the masked image grid,
// fully connected. Positions are laid out for the full latent count so the
// image queries do not move when the prefix is truncated.
TokenLayout decoder_layout(GridShape grid, int keep_len, int latent_total);

// Generator sequence: class token, `ntp_len` next-token positions (causal),
// then HAR groups that attend everything before them and themselves.
TokenLayout generator_layout(int ntp_len, const std::vector<int>& group_sizes);

enum class MaskFormat { Ascii, Csv };
void write_mask(std::ostream& os, const BoolMatrix& mask, MaskFormat format);

RESTOK_END_NAMESPACE
