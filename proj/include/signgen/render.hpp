#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "signgen/data.hpp"

namespace signgen {

// Joint layout (matches PoseSequence): 0..7 body (nose, neck, r-shoulder,
// r-elbow, r-wrist, l-shoulder, l-elbow, l-wrist), 8..28 left hand,
// 29..49 right hand. Each hand is wrist root + four joints per finger.
const std::vector<std::string>& joint_names();
const std::vector<std::pair<int, int>>& skeleton_edges();  // tree of 49 edges

// Stick figure of one frame, orthographic x-y projection (z dropped).
std::string render_frame_svg(const PoseSequence& seq, int frame);

// One SVG per sampled frame (0, stride, 2*stride, ...); returns file names.
std::vector<std::string> render_svg(const PoseSequence& seq,
                                    const std::filesystem::path& out_dir,
                                    const std::string& stem, int stride);

}  // namespace signgen
