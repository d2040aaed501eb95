// Copyright Contributors to the spikesplat project
// SPDX-License-Identifier: Apache-2.0

#include "spikesplat/pipeline.hpp"

#include "spikesplat/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace spikesplat {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr double kSH0 = 0.28209479177387814;
constexpr uint64_t kTagViewSeed = 0x7e;
constexpr uint64_t kTagCalibSeed = 0xca;

double dc_for(double color) { return (color - 0.5) / kSH0; }

Gaussian3D make_blob(const Eigen::Vector3d& mean, const Eigen::Vector3d& scale,
                     const Eigen::Vector4d& rot, double opacity, double gray) {
    Gaussian3D g;
    g.mean = mean;
    g.rot = rot.normalized();
    g.log_scale = scale.array().log();
    g.opacity_logit = logit(opacity);
    g.sh = Eigen::MatrixXd::Zero(1, 4); // degree 1, monochrome
    g.sh(0, 0) = dc_for(gray);
    return g;
}

std::vector<Gaussian3D> blobs3() {
    std::vector<Gaussian3D> scene;
    scene.push_back(make_blob({0.0, 0.02, 0.0}, {0.21, 0.17, 0.19},
                              {1, 0, 0, 0}, 0.95, 0.88));
    scene.push_back(make_blob({0.34, 0.19, -0.13}, {0.15, 0.09, 0.12},
                              {0.92, 0.25, 0.20, 0.15}, 0.88, 0.62));
    scene.push_back(make_blob({-0.30, -0.21, 0.16}, {0.11, 0.13, 0.10},
                              {0.85, -0.3, 0.2, 0.35}, 0.90, 0.42));
    return scene;
}

std::vector<Gaussian3D> checker_sphere() {
    std::vector<Gaussian3D> scene;
    const int count = 420;
    const double radius = 0.42;
    const double golden = 2.39996322972865332; // golden angle
    for (int i = 0; i < count; ++i) {
        double z = 1.0 - 2.0 * (i + 0.5) / count;
        double r = std::sqrt(std::max(0.0, 1.0 - z * z));
        double phi = golden * i;
        Eigen::Vector3d p(radius * r * std::cos(phi), radius * z,
                          radius * r * std::sin(phi));
        Gaussian3D g;
        g.mean = p;
        g.rot = Eigen::Vector4d(1, 0, 0, 0);
        g.log_scale.setConstant(std::log(0.045));
        g.opacity_logit = logit(0.92);
        g.sh = Eigen::MatrixXd::Zero(3, 4);
        int band = static_cast<int>(std::floor((z + 1.0) * 4.0)) +
                   static_cast<int>(std::floor(phi / golden)) % 2;
        bool a = band % 2 == 0;
        Eigen::Vector3d color = a ? Eigen::Vector3d(0.88, 0.32, 0.22)
                                  : Eigen::Vector3d(0.22, 0.50, 0.86);
        for (int c = 0; c < 3; ++c) g.sh(c, 0) = dc_for(color(c));
        scene.push_back(g);
    }
    return scene;
}

} // namespace

bool fixture_exists(const std::string& name) {
    return name == "blobs3" || name == "checker-sphere";
}

std::vector<Gaussian3D> fixture_scene(const std::string& name, int* channels_out) {
    if (name == "blobs3") {
        if (channels_out) *channels_out = 1;
        return blobs3();
    }
    if (name == "checker-sphere") {
        if (channels_out) *channels_out = 3;
        return checker_sphere();
    }
    throw invalid_parameter_error("unknown fixture: " + name +
                                  " (available: blobs3, checker-sphere)");
}

std::vector<CameraView> orbit_rig(int count, int width, int height, double radius,
                                  double focal) {
    if (count <= 0) throw invalid_parameter_error("orbit_rig: count must be > 0");
    std::vector<CameraView> views;
    views.reserve(count);
    const double elevations[3] = {-0.32, 0.05, 0.38};
    for (int i = 0; i < count; ++i) {
        const double theta = 2.0 * M_PI * i / count;
        const double elev = elevations[i % 3];
        Eigen::Vector3d pos(radius * std::cos(elev) * std::cos(theta),
                            radius * std::sin(elev),
                            radius * std::cos(elev) * std::sin(theta));
        // look-at the origin, world up +y, camera looks down its own -z
        Eigen::Vector3d zc = pos.normalized(); // backward
        Eigen::Vector3d up(0, 1, 0);
        Eigen::Vector3d xc = up.cross(zc).normalized();
        Eigen::Vector3d yc = zc.cross(xc);
        Eigen::Matrix3d c2w;
        c2w.col(0) = xc;
        c2w.col(1) = yc;
        c2w.col(2) = zc;

        CameraView v;
        v.width = width;
        v.height = height;
        v.fx = focal;
        v.fy = focal;
        v.cx = width / 2.0;
        v.cy = height / 2.0;
        v.near_z = 0.05;
        v.far_z = 20.0;
        v.world_to_camera.setIdentity();
        v.world_to_camera.topLeftCorner<3, 3>() = c2w.transpose();
        v.world_to_camera.topRightCorner<3, 1>() = -c2w.transpose() * pos;
        v.validate();
        views.push_back(v);
    }
    return views;
}

void simulate_to_dir(const SimulateOptions& opts, const std::string& out_dir) {
    if (opts.views <= 0 || opts.holdout < 0 || opts.holdout >= opts.views)
        throw invalid_parameter_error("simulate: need views > 0 and 0 <= holdout < views");
    if (!(opts.light_scale > 0.0))
        throw invalid_parameter_error("simulate: light_scale must be > 0");
    opts.noise.validate();

    int channels = 1;
    std::vector<Gaussian3D> scene = fixture_scene(opts.fixture, &channels);
    std::vector<CameraView> views = orbit_rig(opts.views, opts.width, opts.height);

    fs::create_directories(out_dir);

    // camera response map: ground truth sensitivity for the simulator
    NonUniformityMap true_map = synthesize_response_map(
        opts.width, opts.height, opts.noise.rnu_sigma, opts.noise.seed ^ 0xf00d);

    ProjectOptions popts;
    const size_t npix = static_cast<size_t>(opts.width) * opts.height;

    // holdout indices evenly spaced over the orbit
    std::vector<int> holdout;
    for (int k = 0; k < opts.holdout; ++k)
        holdout.push_back((k * opts.views) / opts.holdout + opts.views / (2 * std::max(1, opts.holdout)));
    for (int& h : holdout) h = std::min(h, opts.views - 1);

    json manifest;
    manifest["fixture"] = opts.fixture;
    manifest["width"] = opts.width;
    manifest["height"] = opts.height;
    manifest["window"] = opts.window;
    manifest["omega"] = opts.omega;
    manifest["channels"] = channels;
    manifest["light_scale"] = opts.light_scale;
    manifest["seed"] = opts.noise.seed;
    manifest["a0_mode"] = opts.a0_mode == A0Mode::zero ? "zero" : "seeded-uniform";
    manifest["noise"] = {
        {"photon_gain",
         opts.noise.shot_noise() ? json(opts.noise.photon_gain) : json("inf")},
        {"dark_rate", opts.noise.dark_rate},
        {"rnu_sigma", opts.noise.rnu_sigma},
        {"eta", opts.noise.eta},
    };
    manifest["poses"] = "poses.json";
    manifest["rnu"] = "rnu_calibrated.rnu";
    manifest["rnu_true"] = "rnu_true.rnu";
    manifest["views"] = json::array();

    io::write_poses(views, (fs::path(out_dir) / "poses.json").string());
    io::write_rnu_map(true_map, (fs::path(out_dir) / "rnu_true.rnu").string());

    for (int i = 0; i < opts.views; ++i) {
        Image gt = render_scene(scene, views[i], popts, 16, channels);
        std::vector<double> intensity(npix);
        if (channels == 1) {
            intensity.assign(gt.data.begin(), gt.data.end());
        } else {
            for (size_t p = 0; p < npix; ++p) {
                double y = 0.0;
                for (int c = 0; c < 3; ++c) y += gt.data[p * 3 + c] / 3.0;
                intensity[p] = y;
            }
        }
        for (double& v : intensity) v = clamp01(v) * opts.light_scale;

        NoiseConfig view_noise = opts.noise;
        view_noise.seed = Rng::key(opts.noise.seed, kTagViewSeed, static_cast<uint64_t>(i));
        SpikeStream stream = simulate_stream(intensity, opts.width, opts.height,
                                             opts.window, opts.omega, view_noise,
                                             true_map, opts.a0_mode);

        std::ostringstream sn, gn;
        sn << "view_" << std::setw(3) << std::setfill('0') << i << ".dat";
        gn << "gt_" << std::setw(3) << std::setfill('0') << i
           << (channels == 1 ? ".pgm" : ".ppm");
        io::write_spike_dat(stream, (fs::path(out_dir) / sn.str()).string());
        io::write_image(gt, (fs::path(out_dir) / gn.str()).string());

        const bool is_holdout =
            std::find(holdout.begin(), holdout.end(), i) != holdout.end();
        manifest["views"].push_back({{"stream", sn.str()},
                                     {"gt", gn.str()},
                                     {"split", is_holdout ? "holdout" : "train"}});
    }

    // calibration: uniform scene captures through the same camera
    NonUniformityMap calibrated = NonUniformityMap::uniform(opts.width, opts.height);
    if (opts.noise.rnu_sigma > 0.0) {
        std::vector<double> uniform(npix, 0.5);
        std::vector<SpikeStream> calib;
        calib.reserve(opts.calib_streams);
        for (int k = 0; k < opts.calib_streams; ++k) {
            NoiseConfig cn = opts.noise;
            cn.seed = Rng::key(opts.noise.seed, kTagCalibSeed, static_cast<uint64_t>(k));
            calib.push_back(simulate_stream(uniform, opts.width, opts.height,
                                            opts.window, opts.omega, cn, true_map,
                                            opts.a0_mode));
        }
        calibrated = calibrate_nonuniformity(calib);
    }
    io::write_rnu_map(calibrated, (fs::path(out_dir) / "rnu_calibrated.rnu").string());

    std::ofstream mf(fs::path(out_dir) / "manifest.json");
    mf << manifest.dump(2) << "\n";
    if (!mf) throw io_error(io_error::kind::open_failed, "cannot write manifest.json");
}

LoadedDataset load_dataset(const std::string& dir) {
    const fs::path root(dir);
    std::ifstream mf(root / "manifest.json");
    if (!mf)
        throw io_error(io_error::kind::open_failed,
                       dir + ": missing manifest.json (not a dataset directory?)");
    json manifest;
    try {
        mf >> manifest;
    } catch (const json::exception& e) {
        throw io_error(io_error::kind::parse, dir + "/manifest.json: " + e.what());
    }

    LoadedDataset out;
    try {
        out.channels = manifest.value("channels", 1);
        out.all_views = io::read_poses((root / manifest.at("poses").get<std::string>()).string());

        SceneDataset& ds = out.train;
        ds.width = manifest.at("width").get<int>();
        ds.height = manifest.at("height").get<int>();
        ds.window = manifest.at("window").get<int>();
        ds.omega = manifest.at("omega").get<double>();
        ds.channels = out.channels;
        ds.rnu = io::read_rnu_map((root / manifest.at("rnu").get<std::string>()).string());

        const auto& views = manifest.at("views");
        if (views.size() != out.all_views.size())
            throw io_error(io_error::kind::validation,
                           dir + ": manifest view count disagrees with poses.json");
        for (size_t i = 0; i < views.size(); ++i) {
            const auto& v = views[i];
            const std::string split = v.value("split", "train");
            Image gt;
            if (v.contains("gt")) {
                gt = io::read_image((root / v.at("gt").get<std::string>()).string());
            }
            out.all_gt.push_back(gt);
            if (split == "holdout") {
                out.holdout_indices.push_back(static_cast<int>(i));
                continue;
            }
            out.train_indices.push_back(static_cast<int>(i));
            ds.views.push_back(out.all_views[i]);
            ds.streams.push_back(io::read_spike_dat(
                (root / v.at("stream").get<std::string>()).string()));
            if (gt.width > 0) ds.gt_images.push_back(gt);
        }
        ds.validate();
    } catch (const json::exception& e) {
        throw io_error(io_error::kind::parse, dir + "/manifest.json: " + e.what());
    }
    return out;
}

EvalReport evaluate_images(const std::vector<Image>& rendered,
                           const std::vector<Image>& gt,
                           const std::vector<std::string>& names) {
    if (rendered.size() != gt.size() || rendered.size() != names.size())
        throw invalid_parameter_error("evaluate: image count mismatch");
    if (rendered.empty()) throw invalid_parameter_error("evaluate: nothing to compare");
    EvalReport report;
    double psnr_sum = 0.0, ssim_sum = 0.0;
    for (size_t i = 0; i < rendered.size(); ++i) {
        EvalRow row;
        row.name = names[i];
        row.psnr = psnr(rendered[i], gt[i]);
        row.ssim = ssim_image(rendered[i], gt[i]);
        psnr_sum += row.psnr;
        ssim_sum += row.ssim;
        report.rows.push_back(row);
    }
    report.mean_psnr = psnr_sum / rendered.size();
    report.mean_ssim = ssim_sum / rendered.size();
    return report;
}

EvalReport evaluate_dirs(const std::string& rendered_dir, const std::string& gt_dir) {
    auto list_images = [](const std::string& dir) {
        std::vector<std::string> names;
        for (const auto& e : fs::directory_iterator(dir)) {
            if (!e.is_regular_file()) continue;
            std::string ext = e.path().extension().string();
            if (ext == ".pgm" || ext == ".ppm") names.push_back(e.path().filename().string());
        }
        std::sort(names.begin(), names.end());
        return names;
    };
    std::vector<std::string> ra = list_images(rendered_dir);
    std::vector<std::string> rb = list_images(gt_dir);
    if (ra.size() != rb.size())
        throw invalid_parameter_error("evaluate: directories hold different image counts (" +
                                      std::to_string(ra.size()) + " vs " +
                                      std::to_string(rb.size()) + ")");
    if (ra.empty()) throw invalid_parameter_error("evaluate: no images found");
    std::vector<Image> ia, ib;
    for (size_t i = 0; i < ra.size(); ++i) {
        ia.push_back(io::read_image((fs::path(rendered_dir) / ra[i]).string()));
        ib.push_back(io::read_image((fs::path(gt_dir) / rb[i]).string()));
    }
    return evaluate_images(ia, ib, ra);
}

std::string format_eval_csv(const EvalReport& report) {
    std::ostringstream os;
    os << "view,psnr_db,ssim\n";
    for (const EvalRow& r : report.rows)
        os << r.name << "," << r.psnr << "," << r.ssim << "\n";
    os << "mean," << report.mean_psnr << "," << report.mean_ssim << "\n";
    return os.str();
}

std::string format_eval_table(const EvalReport& report) {
    size_t w = 4;
    for (const EvalRow& r : report.rows) w = std::max(w, r.name.size());
    std::ostringstream os;
    os << std::left << std::setw(static_cast<int>(w) + 2) << "view" << std::right
       << std::setw(10) << "PSNR(dB)" << std::setw(10) << "SSIM" << "\n";
    os << std::fixed << std::setprecision(3);
    for (const EvalRow& r : report.rows)
        os << std::left << std::setw(static_cast<int>(w) + 2) << r.name << std::right
           << std::setw(10) << r.psnr << std::setw(10) << r.ssim << "\n";
    os << std::left << std::setw(static_cast<int>(w) + 2) << "mean" << std::right
       << std::setw(10) << report.mean_psnr << std::setw(10) << report.mean_ssim
       << "\n";
    return os.str();
}

} // namespace spikesplat
