// build_manifest: turns a tab-separated item list plus mask PNGs into a
// dataset manifest for `vasa eval`.
//
// Columns (header row required, order free):
//   id  image  query_short  query_long  split  gt  [others]
// `image`, `gt` and `others` are paths relative to the TSV file. Mask PNGs
// count any non-black pixel as foreground. An empty `others` cell leaves the
// item out of xIoU.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vasa/bench.hpp"

namespace fs = std::filesystem;

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream in(line);
  std::string cell;
  while (std::getline(in, cell, '\t')) out.push_back(cell);
  if (!line.empty() && line.back() == '\t') out.emplace_back();
  return out;
}

vasa::RasterMask read_mask(const fs::path& path) {
  const vasa::Image img = vasa::read_png(path);
  vasa::RasterMask m(img.width(), img.height());
  for (int r = 0; r < img.height(); ++r) {
    for (int c = 0; c < img.width(); ++c) {
      const auto& p = img.at(r, c);
      if (p.r || p.g || p.b) m.set(r, c, true);
    }
  }
  return m;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Build a dataset manifest from a TSV item list and mask PNGs"};
  std::string tsv, out = "dataset.json";
  app.add_option("items", tsv, "Tab-separated item list")->required()->check(CLI::ExistingFile);
  app.add_option("-o,--out", out, "Manifest to write")->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  try {
    const fs::path base = fs::path(tsv).parent_path();
    const fs::path out_dir = fs::absolute(out).parent_path();
    std::ifstream in(tsv);
    std::string line;
    if (!std::getline(in, line)) throw vasa::Error(vasa::Errc::MalformedManifest, "empty item list");
    std::map<std::string, std::size_t> col;
    const auto header = split_tabs(line);
    for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
    for (const char* need : {"id", "image", "query_short", "query_long", "split", "gt"}) {
      if (!col.count(need)) throw vasa::Error(vasa::Errc::MalformedManifest, std::string("missing column ") + need);
    }

    nlohmann::json items = nlohmann::json::array();
    int line_no = 1;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      const auto cells = split_tabs(line);
      auto cell = [&](const std::string& name) -> std::string {
        const auto it = col.find(name);
        return it == col.end() || it->second >= cells.size() ? std::string() : cells[it->second];
      };
      const std::string where = "line " + std::to_string(line_no) + " ('" + cell("id") + "')";
      const fs::path image = base / cell("image");
      const auto [w, h] = vasa::png_dimensions(image);
      const auto gt = read_mask(base / cell("gt"));
      if (gt.width() != w || gt.height() != h) {
        throw vasa::Error(vasa::Errc::DimensionMismatch, where + ": gt size differs from the image");
      }
      nlohmann::json j{{"id", cell("id")},
                       {"image", fs::relative(fs::absolute(image), out_dir).generic_string()},
                       {"query_short", cell("query_short")},
                       {"query_long", cell("query_long")},
                       {"split", cell("split")},
                       {"gt", vasa::rle_to_json(vasa::rle_encode(gt))}};
      if (!cell("others").empty()) {
        const auto others = read_mask(base / cell("others"));
        if (others.width() != w || others.height() != h) {
          throw vasa::Error(vasa::Errc::DimensionMismatch, where + ": others size differs from the image");
        }
        j["others"] = vasa::rle_to_json(vasa::rle_encode(others));
      }
      items.push_back(std::move(j));
    }
    vasa::write_text_file(out, nlohmann::json{{"version", vasa::kManifestVersion}, {"items", items}}.dump(1) + "\n");
    // Round-trip through the loader so problems surface here, not at eval time.
    const auto loaded = vasa::load_dataset(out);
    std::cout << "wrote " << out << " with " << loaded.size() << " item(s)\n";
  } catch (const std::exception& e) {
    std::cerr << "build_manifest: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
