// FitResult <-> JSON and the paper-style text report. The renderer consumes
// the JSON document so that a report re-rendered from a written file is
// byte-identical to the original.
#pragma once

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include <json.hpp>

#include "blocklmm/fit.hpp"

namespace blocklmm {

inline nlohmann::json to_json(const FitResult& r, const Model& model) {
    nlohmann::json j;
    j["formula"] = render_formula(model.ast);
    j["criterion"] = r.reml ? "REML" : "ML";
    j["objective"] = r.objective;
    j["theta"] = r.theta;
    j["beta"] = std::vector<double>(r.beta.data(), r.beta.data() + r.beta.size());
    j["se"] = std::vector<double>(r.se.data(), r.se.data() + r.se.size());
    j["sigma"] = std::sqrt(r.sigma2);
    j["fixed_names"] = std::vector<std::string>(model.xy.names.begin(), model.xy.names.end() - 1);
    j["n"] = model.dims.n;
    j["p"] = model.dims.p;
    j["df"] = r.df;
    j["n_evals"] = r.n_evals;
    j["converged"] = r.converged;
    j["perfect_fit"] = r.perfect_fit;

    nlohmann::json groups = nlohmann::json::array();
    for (std::size_t i = 0; i < r.varcorr.size(); ++i) {
        const auto& vc = r.varcorr[i];
        nlohmann::json g;
        g["grouping"] = vc.grouping;
        g["nlevels"] = model.terms[i].nlevels();
        g["columns"] = vc.column_names;
        std::vector<std::vector<double>> cov(vc.cov.rows());
        for (Eigen::Index a = 0; a < vc.cov.rows(); ++a)
            cov[a] = std::vector<double>(vc.cov.row(a).begin(), vc.cov.row(a).end());
        g["cov"] = cov;
        std::vector<std::vector<bool>> mask = vc.corr_mask;
        g["corr_mask"] = mask;
        groups.push_back(std::move(g));
    }
    j["varcorr"] = groups;
    return j;
}

namespace detail {

inline std::string fmt(const char* spec, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

}  // namespace detail

/// Text report in the layout of the MixedModels model display.
inline std::string render_report(const nlohmann::json& j) {
    using detail::fmt;
    std::string out;
    const bool reml = j["criterion"] == "REML";
    out += reml ? "Linear mixed model fit by REML\n" : "Linear mixed model fit by maximum likelihood\n";
    out += " " + j["formula"].get<std::string>() + "\n";

    const double obj = j["objective"].get<double>();
    if (reml) {
        out += " REML criterion at convergence: " + fmt("%.8f", obj) + "\n\n";
    } else {
        const double df = j["df"].get<double>();
        const double n = j["n"].get<double>();
        const double aic = obj + 2 * df;
        const double bic = obj + df * std::log(n);
        const double aicc = aic + 2 * df * (df + 1) / (n - df - 1);
        out += "    logLik     -2 logLik       AIC         AICc          BIC\n";
        out += " " + fmt("%12.4f", -obj / 2) + "  " + fmt("%12.4f", obj) + "  " + fmt("%12.4f", aic) +
               "  " + fmt("%12.4f", aicc) + "  " + fmt("%12.4f", bic) + "\n\n";
    }

    out += "Variance components:\n";
    out += "            Column       Variance   Std.Dev.    Corr.\n";
    const double sigma = j["sigma"].get<double>();
    for (const auto& g : j["varcorr"]) {
        const auto& cols = g["columns"];
        const auto& cov = g["cov"];
        const auto& mask = g["corr_mask"];
        for (std::size_t a = 0; a < cols.size(); ++a) {
            std::string grouping = a == 0 ? g["grouping"].get<std::string>() : "";
            grouping.resize(9, ' ');
            std::string colname = cols[a].get<std::string>();
            colname.resize(12, ' ');
            const double var = cov[a][a].get<double>();
            out += grouping + colname + fmt("%11.7f", var) + fmt("%11.7f", std::sqrt(var));
            for (std::size_t b = 0; b < a; ++b) {
                if (!mask[a][b].get<bool>()) {
                    out += "     .";
                } else {
                    const double denom =
                        std::sqrt(cov[a][a].get<double>() * cov[b][b].get<double>());
                    const double corr = denom > 0 ? cov[a][b].get<double>() / denom : 0.0;
                    out += fmt(" %+.3f", corr);
                }
            }
            out += "\n";
        }
    }
    out += "Residual " + std::string(13, ' ') + fmt("%11.7f", sigma * sigma) +
           fmt("%11.7f", sigma) + "\n";

    out += " Number of obs: " + std::to_string(j["n"].get<long long>()) +
           "; levels of grouping factors: ";
    bool first = true;
    for (const auto& g : j["varcorr"]) {
        if (!first) out += ", ";
        out += std::to_string(g["nlevels"].get<long long>());
        first = false;
    }
    out += "\n\n";

    out += "  Fixed-effects parameters:\n";
    out += "                    Coef.   Std. Error        z\n";
    const auto& names = j["fixed_names"];
    const auto& beta = j["beta"];
    const auto& se = j["se"];
    for (std::size_t i = 0; i < names.size(); ++i) {
        std::string nm = names[i].get<std::string>();
        nm.resize(12, ' ');
        const double b = beta[i].get<double>();
        const double s = se[i].get<double>();
        out += nm + fmt("%13.7g", b) + fmt("%13.7g", s) + fmt("%9.2f", s > 0 ? b / s : 0.0) + "\n";
    }
    return out;
}

}  // namespace blocklmm
