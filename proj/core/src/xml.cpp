#include "xml.hpp"

#include <cctype>
#include <cstdint>

#include "statark/error.hpp"

namespace statark::xml {
namespace {

bool is_name_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == ':' || c == '.';
}

void append_utf8(std::string& out, uint32_t cp) {
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xC0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else if (cp < 0x10000) {
    out += static_cast<char>(0xE0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    out += static_cast<char>(0xF0 | (cp >> 18));
    out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  }
}

class Reader {
 public:
  explicit Reader(std::string_view text) : text_(text) {}

  Element document() {
    skip_misc();
    if (at_end() || peek() != '<') fail("expected root element");
    Element root = element();
    skip_misc();
    if (!at_end()) fail("content after root element");
    return root;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const { throw IrError("XML syntax error: " + what, line_); }

  bool at_end() const { return pos_ >= text_.size(); }
  char peek(size_t ahead = 0) const { return pos_ + ahead < text_.size() ? text_[pos_ + ahead] : '\0'; }
  bool starts_with(std::string_view s) const { return text_.substr(pos_).starts_with(s); }

  char get() {
    if (at_end()) fail("unexpected end of input");
    char c = text_[pos_++];
    if (c == '\n') ++line_;
    return c;
  }

  void expect(char c) {
    if (get() != c) fail(std::string("expected '") + c + "'");
  }

  void skip_ws() {
    while (!at_end() && std::isspace(static_cast<unsigned char>(peek()))) get();
  }

  void skip_until(std::string_view terminator) {
    while (!starts_with(terminator)) get();
    for (size_t i = 0; i < terminator.size(); ++i) get();
  }

  // Whitespace, comments and processing instructions between elements.
  void skip_misc() {
    for (;;) {
      skip_ws();
      if (starts_with("<?")) {
        skip_until("?>");
      } else if (starts_with("<!--")) {
        skip_until("-->");
      } else if (starts_with("<!")) {
        fail("DTD and CDATA sections are not supported");
      } else {
        return;
      }
    }
  }

  std::string name() {
    std::string out;
    while (!at_end() && is_name_char(peek())) out += get();
    if (out.empty()) fail("expected a name");
    return out;
  }

  void entity(std::string& out) {
    expect('&');
    std::string ref;
    while (peek() != ';') {
      if (at_end() || ref.size() > 10) fail("unterminated entity reference");
      ref += get();
    }
    get();
    if (ref == "lt") out += '<';
    else if (ref == "gt") out += '>';
    else if (ref == "amp") out += '&';
    else if (ref == "quot") out += '"';
    else if (ref == "apos") out += '\'';
    else if (ref.size() > 1 && ref[0] == '#') {
      const bool hex = ref[1] == 'x';
      try {
        append_utf8(out, static_cast<uint32_t>(std::stoul(ref.substr(hex ? 2 : 1), nullptr, hex ? 16 : 10)));
      } catch (const std::exception&) {
        fail("bad character reference &" + ref + ";");
      }
    } else {
      fail("unknown entity &" + ref + ";");
    }
  }

  std::string attribute_value() {
    const char quote = get();
    if (quote != '"' && quote != '\'') fail("attribute value must be quoted");
    std::string out;
    while (peek() != quote) {
      if (at_end()) fail("unterminated attribute value");
      // A bare '<' is tolerated: hand-written IR excerpts use names like "<...>".
      if (peek() == '&') entity(out);
      else out += get();
    }
    get();
    return out;
  }

  Element element() {
    Element el;
    el.line = line_;
    expect('<');
    el.tag = name();
    for (;;) {
      skip_ws();
      if (peek() == '/') {
        get();
        expect('>');
        return el;
      }
      if (peek() == '>') {
        get();
        break;
      }
      std::string key = name();
      for (const auto& [k, v] : el.attributes) {
        if (k == key) fail("duplicate attribute '" + key + "' on <" + el.tag + ">");
      }
      skip_ws();
      expect('=');
      skip_ws();
      el.attributes.emplace_back(std::move(key), attribute_value());
    }
    for (;;) {
      if (at_end()) fail("unclosed element <" + el.tag + ">");
      if (starts_with("<!--")) {
        skip_until("-->");
      } else if (starts_with("<?")) {
        skip_until("?>");
      } else if (starts_with("</")) {
        get();
        get();
        const std::string closing = name();
        if (closing != el.tag) fail("mismatched closing tag </" + closing + "> for <" + el.tag + ">");
        skip_ws();
        expect('>');
        return el;
      } else if (starts_with("<!")) {
        fail("DTD and CDATA sections are not supported");
      } else if (peek() == '<') {
        el.children.push_back(element());
      } else if (peek() == '&') {
        entity(el.text);
      } else {
        el.text += get();
      }
    }
  }

  std::string_view text_;
  size_t pos_ = 0;
  int line_ = 1;
};

}  // namespace

std::optional<std::string_view> Element::attribute(std::string_view key) const {
  for (const auto& [k, v] : attributes) {
    if (k == key) return std::string_view(v);
  }
  return std::nullopt;
}

const Element* Element::child(std::string_view name) const {
  for (const auto& c : children) {
    if (c.tag == name) return &c;
  }
  return nullptr;
}

std::vector<const Element*> Element::children_named(std::string_view name) const {
  std::vector<const Element*> out;
  for (const auto& c : children) {
    if (c.tag == name) out.push_back(&c);
  }
  return out;
}

Element parse(std::string_view text) { return Reader(text).document(); }

std::string escape(std::string_view raw) {
  std::string out;
  out.reserve(raw.size());
  for (char c : raw) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      case '\n': out += "&#10;"; break;
      case '\r': out += "&#13;"; break;
      case '\t': out += "&#9;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace statark::xml
