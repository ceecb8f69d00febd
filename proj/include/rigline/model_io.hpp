#pragma once

#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "rigline/classifier.hpp"
#include "rigline/error.hpp"
#include "rigline/imbalance.hpp"
#include "rigline/mlp.hpp"
#include "rigline/naive_bayes.hpp"
#include "rigline/rule_list.hpp"
#include "rigline/stacking.hpp"
#include "rigline/svm.hpp"
#include "rigline/text_io.hpp"
#include "rigline/tree.hpp"

namespace rigline {

inline constexpr std::string_view kModelHeader = "rigline-model";
inline constexpr int kModelFormatVersion = 1;

/// Reads one "model <kind> ... end <kind>" document, recursing into children.
inline TrainedModel read_model(TokenReader& r) {
    r.expect("model");
    const auto kind = r.word();
    TrainedModel m;
    const ModelReader child = [](TokenReader& rr) { return read_model(rr); };
    if (kind == "standardized") m = StandardizedModel::read_body(r, child);
    else if (kind == "svm") m = CalibratedSvm::read_body(r);
    else if (kind == "nb") m = NaiveBayesModel::read_body(r);
    else if (kind == "cart") m = TreeModel::read_body(r);
    else if (kind == "forest") m = ForestModel::read_body(r);
    else if (kind == "part") m = RuleListModel::read_body(r);
    else if (kind == "mlp") m = MlpModel::read_body(r);
    else if (kind == "cost") m = CostSensitiveModel::read_body(r, child);
    else if (kind == "stack") m = StackedModel::read_body(r, child);
    else throw ParseError("unknown model kind '" + kind + "'");
    r.expect("end");
    r.expect(kind);
    return m;
}

inline void write_model(std::ostream& os, const Classifier& m) {
    TokenWriter w(os);
    w.key(kModelHeader).integer(kModelFormatVersion).end();
    m.write(w);
}

inline TrainedModel read_model(std::istream& is) {
    TokenReader r(is);
    r.expect(kModelHeader);
    const auto version = r.integer();
    if (version != kModelFormatVersion) {
        throw ParseError("unsupported model format version " + std::to_string(version));
    }
    return read_model(r);
}

inline void save_model(const std::string& path, const Classifier& m) {
    std::ofstream os(path);
    if (!os) throw Error("cannot write model file '" + path + "'");
    write_model(os, m);
    if (!os) throw Error("failed writing model file '" + path + "'");
}

inline TrainedModel load_model(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw Error("cannot open model file '" + path + "'");
    return read_model(is);
}

}  // namespace rigline
