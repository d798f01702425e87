#include "signgen/render.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

namespace signgen {

const std::vector<std::string>& joint_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n = {"nose",       "neck",       "r_shoulder", "r_elbow",
                                  "r_wrist",    "l_shoulder", "l_elbow",    "l_wrist"};
    const char* fingers[] = {"thumb", "index", "middle", "ring", "pinky"};
    for (const char* side : {"l", "r"}) {
      n.push_back(std::string(side) + "_hand_root");
      for (const char* f : fingers)
        for (int k = 1; k <= 4; ++k)
          n.push_back(std::string(side) + "_" + f + "_" + std::to_string(k));
    }
    return n;
  }();
  return names;
}

const std::vector<std::pair<int, int>>& skeleton_edges() {
  static const std::vector<std::pair<int, int>> edges = [] {
    std::vector<std::pair<int, int>> e = {{0, 1}, {1, 2}, {2, 3}, {3, 4},
                                          {1, 5}, {5, 6}, {6, 7}};
    for (int base : {8, 29}) {
      for (int finger = 0; finger < 5; ++finger) {
        e.emplace_back(base, base + 1 + 4 * finger);
        for (int k = 0; k < 3; ++k)
          e.emplace_back(base + 1 + 4 * finger + k, base + 2 + 4 * finger + k);
      }
    }
    e.emplace_back(7, 8);   // left wrist -> left hand root
    e.emplace_back(4, 29);  // right wrist -> right hand root
    return e;
  }();
  return edges;
}

std::string render_frame_svg(const PoseSequence& seq, int frame) {
  if (frame < 0 || frame >= seq.frames())
    throw DataError("render: frame " + std::to_string(frame) + " outside sequence of " +
                    std::to_string(seq.frames()));
  double min_x = seq.at(frame, 0), max_x = min_x;
  double min_y = seq.at(frame, 1), max_y = min_y;
  for (int j = 0; j < PoseSequence::kJoints; ++j) {
    const double x = seq.at(frame, 3 * j);
    const double y = seq.at(frame, 3 * j + 1);
    min_x = std::min(min_x, x);
    max_x = std::max(max_x, x);
    min_y = std::min(min_y, y);
    max_y = std::max(max_y, y);
  }
  double span = std::max(max_x - min_x, max_y - min_y);
  if (span <= 0.0) span = 1.0;
  const double pad = 0.1 * span;
  const double radius = 0.01 * span;
  const double stroke = 0.008 * span;

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"400\" height=\"400\" viewBox=\"";
  svg += fmt_double(min_x - pad) + " " + fmt_double(min_y - pad) + " " +
         fmt_double(max_x - min_x + 2 * pad) + " " + fmt_double(max_y - min_y + 2 * pad) +
         "\">\n";
  for (auto [a, b] : skeleton_edges()) {
    svg += "<line x1=\"" + fmt_double(seq.at(frame, 3 * a)) + "\" y1=\"" +
           fmt_double(seq.at(frame, 3 * a + 1)) + "\" x2=\"" +
           fmt_double(seq.at(frame, 3 * b)) + "\" y2=\"" +
           fmt_double(seq.at(frame, 3 * b + 1)) + "\" stroke=\"black\" stroke-width=\"" +
           fmt_double(stroke) + "\"/>\n";
  }
  for (int j = 0; j < PoseSequence::kJoints; ++j) {
    svg += "<circle cx=\"" + fmt_double(seq.at(frame, 3 * j)) + "\" cy=\"" +
           fmt_double(seq.at(frame, 3 * j + 1)) + "\" r=\"" + fmt_double(radius) +
           "\" fill=\"crimson\"/>\n";
  }
  svg += "</svg>\n";
  return svg;
}

std::vector<std::string> render_svg(const PoseSequence& seq,
                                    const std::filesystem::path& out_dir,
                                    const std::string& stem, int stride) {
  if (stride < 1) throw DataError("render: stride must be >= 1");
  if (seq.frames() < 1) throw DataError("render: empty pose sequence");
  std::filesystem::create_directories(out_dir);
  std::vector<std::string> files;
  for (int t = 0; t < seq.frames(); t += stride) {
    std::string digits = std::to_string(t);
    while (digits.size() < 4) digits.insert(digits.begin(), '0');
    const std::string name = stem + "_f" + digits + ".svg";
    std::ofstream f(out_dir / name, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write " + (out_dir / name).string());
    f << render_frame_svg(seq, t);
    files.push_back(name);
  }
  return files;
}

}  // namespace signgen
