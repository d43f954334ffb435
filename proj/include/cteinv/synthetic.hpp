#pragma once

// Deterministic template corpora standing in for the fan-fiction and
// public-domain book collections at desk scale. Word choice is Zipfian so
// small subsamples miss the rarer vocabulary.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cteinv/errors.hpp"
#include "cteinv/random.hpp"

namespace cteinv::synthetic {

class Zipf {
 public:
  explicit Zipf(std::vector<std::string> items, double s = 1.0) : items_(std::move(items)) {
    double acc = 0;
    for (std::size_t i = 0; i < items_.size(); ++i) {
      acc += 1.0 / std::pow(static_cast<double>(i + 1), s);
      cdf_.push_back(acc);
    }
  }
  const std::string& operator()(Rng& rng) const {
    const double u = rng.uniform() * cdf_.back();
    const auto i = static_cast<std::size_t>(std::upper_bound(cdf_.begin(), cdf_.end(), u) - cdf_.begin());
    return items_[std::min(i, items_.size() - 1)];
  }
  std::size_t size() const { return items_.size(); }

 private:
  std::vector<std::string> items_;
  std::vector<double> cdf_;
};

/// Slot letters: N name, V verb, O object noun, A adjective, D adverb,
/// P place, S sentence opener, R roman numeral.
struct Domain {
  std::string name;
  std::uint64_t stream;
  std::map<char, Zipf> slots;
  std::vector<std::string> templates;
};

namespace detail {

inline std::vector<std::string> words(const char* s) {
  std::istringstream is(s);
  std::vector<std::string> out;
  for (std::string w; is >> w;) {
    std::replace(w.begin(), w.end(), '_', ' ');
    out.push_back(w);
  }
  return out;
}

inline std::string roman(std::uint64_t n) {
  static const std::pair<std::uint64_t, const char*> table[] = {{50, "L"}, {40, "XL"}, {10, "X"}, {9, "IX"},
                                                                 {5, "V"},  {4, "IV"},  {1, "I"}};
  std::string out;
  for (const auto& [v, s] : table) {
    while (n >= v) {
      out += s;
      n -= v;
    }
  }
  return out;
}

}  // namespace detail

inline const Domain& action_domain() {
  using detail::words;
  static const Domain d{
      "action",
      1,
      {{'N', Zipf(words("Harry Ron Hermione Draco Ginny Luna Neville Sirius Remus Severus Albus Minerva Tonks Fred "
                        "George Percy Cedric Cho Dean Seamus Oliver Katie Viktor Fleur Bill Charlie Molly Arthur "
                        "Hagrid Dobby Lavender Parvati Padma Ernie Hannah Susan Zacharias Blaise Pansy Theo"))},
       {'V', Zipf(words("grabbed pushed kissed slammed dodged punched kicked chased caught threw dragged shoved "
                        "pulled smashed blocked fired tackled ducked hurled snatched struck seized rushed gripped "
                        "yanked hugged touched watched followed stopped raised lowered flicked swung tossed crushed "
                        "broke opened closed climbed fought stabbed burned froze shattered ripped"))},
       {'O', Zipf(words("wand door window broom sword shield table wall floor staircase cloak map book letter "
                        "potion cauldron scar hand arm shoulder face fist knife rope chain bottle glass chair bed "
                        "lamp ring necklace locket cup mirror stone egg dragon owl cat rat snake spider wolf horse "
                        "mask helmet ladder bridge gate tower roof fence tree branch rock torch candle blanket "
                        "pillow bag trunk robe scarf boot glove coin key lock box crate barrel"))},
       {'A', Zipf(words("dark heavy broken bright silver golden tiny huge cold hot wet sharp narrow wide old "
                        "ancient cracked burning frozen bloody dusty shiny hidden secret empty crowded quiet loud "
                        "wild angry scared tired furious gentle fierce strange wooden iron black red green blue"))},
       {'D', Zipf(words("quickly slowly suddenly quietly angrily carefully desperately gently roughly fiercely "
                        "silently nervously softly loudly wildly barely finally instantly"))},
       {'P', Zipf(words("Hogwarts Hogsmeade Gringotts the_castle the_forest the_lake the_corridor the_dungeon "
                        "the_library the_kitchen the_tower the_hallway the_pitch the_village the_alley the_station "
                        "the_ministry the_attic the_cellar the_garden"))},
       {'S', Zipf(words("Then Suddenly Later Meanwhile Still Again Finally Outside Inside Above Below"))}},
      {"N V the A O.", "N D V the O in P.", "\"Get the O, N!\" shouted N.", "S N V N and ran.",
       "The O was A and A.", "N and N V the O D.", "\"Where is the O?\" asked N.", "S, N V a A O near P.",
       "N V the O and the O before N could move.", "\"No!\" N V, and the A O fell."}};
  return d;
}

inline const Domain& archive_domain() {
  using detail::words;
  static const Domain d{
      "archive",
      2,
      {{'N', Zipf(words("Elizabeth Darcy Bennet Catherine Heathcliff Edgar Isabella Pip Estella Havisham Oliver "
                        "Fagin Nancy Emma Knightley Harriet Marianne Elinor Edward Willoughby Jane Rochester Adele "
                        "Bertha Ishmael Ahab Queequeg Starbuck Tess Angel Jude Sue Dorian Basil Henry Sybil Hester "
                        "Roger Pearl"))},
       {'V', Zipf(words("beheld perceived entreated remarked observed declared answered resolved wondered returned "
                        "departed journeyed lingered wandered fancied supposed conceived bestowed received proposed "
                        "consented refused obliged esteemed admired despised pitied forgave besought implored "
                        "perused composed dispatched summoned attended accompanied quitted forsook regarded "
                        "contemplated endured suffered"))},
       {'O', Zipf(words("parlour carriage estate fortune countenance gentleman lady sister cousin uncle aunt "
                        "acquaintance letter manner temper disposition sentiment affection regard honour virtue "
                        "society neighbourhood servant garden shrubbery library fireside evening morning dinner "
                        "ball assembly visit journey inheritance marriage engagement reputation conduct spirit "
                        "heart mind reason folly prudence vanity pride prejudice sorrow despair hope whale ship "
                        "harpoon ocean voyage captain sailor deck mast"))},
       {'A', Zipf(words("amiable agreeable tolerable handsome genteel respectable obliging melancholy sensible "
                        "prudent foolish wretched excellent dreadful singular considerable indifferent eager "
                        "solemn grave cheerful gloomy humble proud"))},
       {'D', Zipf(words("exceedingly tolerably perfectly scarcely greatly heartily earnestly presently directly "
                        "certainly indeed accordingly gravely civilly warmly"))},
       {'P', Zipf(words("Longbourn Pemberley Netherfield London Bath Thornfield Lowood Nantucket the_abbey "
                        "the_vicarage the_rectory the_parsonage the_village the_county the_town the_moors "
                        "the_harbour the_chapel the_manor"))},
       {'S', Zipf(words("Indeed However Nevertheless Accordingly Presently Thus Yet Alas Moreover Hence"))}},
      {"N V the A O of N.", "S, N D V that the O was A.", "\"I V your O,\" said N.", "It was a A O at P.",
       "N V N with A O.", "The O of P was D A.", "S the O V N, who was A.", "N had V the O; N V it D.",
       "CHAPTER R.", "S N V to P, and V the O."}};
  return d;
}

inline const Domain& domain_by_name(const std::string& name) {
  if (name == "action") return action_domain();
  if (name == "archive") return archive_domain();
  throw InvalidArgument("unknown synthetic domain '" + name + "' (expected action or archive)");
}

inline std::string expand(const Domain& d, const std::string& tmpl, Rng& rng) {
  std::string out;
  for (std::size_t i = 0; i < tmpl.size(); ++i) {
    const char c = tmpl[i];
    const bool boundary = (i == 0 || !std::isalpha(static_cast<unsigned char>(tmpl[i - 1]))) &&
                          (i + 1 == tmpl.size() || !std::isalpha(static_cast<unsigned char>(tmpl[i + 1])));
    if (boundary && c == 'R') {
      out += detail::roman(1 + rng.below(40));
    } else if (boundary && d.slots.count(c)) {
      out += d.slots.at(c)(rng);
    } else {
      out.push_back(c);
    }
  }
  return out;
}

/// `n` lines of the named domain; identical output for identical seed.
inline std::vector<std::string> generate(const std::string& domain, std::size_t n, std::uint64_t seed) {
  const auto& d = domain_by_name(domain);
  Rng rng(derive_seed(seed, d.stream));
  std::vector<std::string> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(expand(d, d.templates[rng.below(d.templates.size())], rng));
  return out;
}

inline void write_lines(const std::vector<std::string>& lines, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& l : lines) out << l << '\n';
}

}  // namespace cteinv::synthetic
