#pragma once

#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace statark::xml {

// Minimal DOM for the IR subset of XML: elements, attributes, character data,
// comments and processing instructions (both skipped). Every element keeps
// the line it started on so structural errors can point back at the source.
struct Element {
  std::string tag;
  std::vector<std::pair<std::string, std::string>> attributes;
  std::vector<Element> children;
  std::string text;
  int line = 0;

  std::optional<std::string_view> attribute(std::string_view key) const;
  const Element* child(std::string_view tag) const;
  std::vector<const Element*> children_named(std::string_view tag) const;
};

// Throws IrError with the offending line on malformed input.
Element parse(std::string_view text);

std::string escape(std::string_view raw);

}  // namespace statark::xml
