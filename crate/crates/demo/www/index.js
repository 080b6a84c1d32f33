import init, {
  constellationScatter, scheduleCurves, synthImage, transmitImage, forwardPreview, imagePsnr,
} from "./pkg/cdiff_demo.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function guard(errId, f) {
  try {
    $(errId).textContent = "";
    f();
  } catch (e) {
    $(errId).textContent = String(e.message ?? e);
  }
}

function drawScatter() {
  $("c-snr-v").textContent = ` ${num("c-snr")}`;
  guard("c-err", () => {
    const order = num("c-order");
    const n = 3000;
    const v = constellationScatter(order, num("c-snr"), num("c-kt"), num("c-kr"), n, num("c-seed"));
    const cv = $("c-plot");
    const g = cv.getContext("2d");
    const half = cv.width / 2;
    const scale = half / 1.8;
    g.fillStyle = "#fff";
    g.fillRect(0, 0, cv.width, cv.height);
    g.strokeStyle = "#ddd";
    g.beginPath();
    g.moveTo(0, half); g.lineTo(cv.width, half);
    g.moveTo(half, 0); g.lineTo(half, cv.height);
    g.stroke();
    g.fillStyle = "rgba(30, 90, 200, 0.25)";
    for (let k = order; k < order + n; k++) {
      g.fillRect(half + v[2 * k] * scale - 1, half - v[2 * k + 1] * scale - 1, 2, 2);
    }
    g.fillStyle = "#c00";
    for (let k = 0; k < order; k++) {
      g.beginPath();
      g.arc(half + v[2 * k] * scale, half - v[2 * k + 1] * scale, 3, 0, 2 * Math.PI);
      g.fill();
    }
  });
}

const CURVES = [
  ["ᾱ", "#1f77b4"], ["λ", "#ff7f0e"], ["δ", "#2ca02c"],
  ["ψ_x − 1", "#d62728"], ["ψ_x̂", "#9467bd"], ["ψ_ε", "#8c564b"],
];

function drawSchedule() {
  guard("s-err", () => {
    const steps = num("s-steps");
    const rows = scheduleCurves(steps, num("s-b0"), num("s-b1"));
    const cv = $("s-plot");
    const g = cv.getContext("2d");
    g.fillStyle = "#fff";
    g.fillRect(0, 0, cv.width, cv.height);
    const x = (t) => 30 + ((t - 1) / Math.max(steps - 1, 1)) * (cv.width - 40);
    const y = (v) => cv.height - 20 - Math.min(Math.max(v, -0.05), 1.05) * (cv.height - 40);
    g.strokeStyle = "#ccc";
    g.strokeRect(30, y(1), cv.width - 40, y(0) - y(1));
    CURVES.forEach(([, colour], c) => {
      g.strokeStyle = colour;
      g.beginPath();
      for (let t = 1; t <= steps; t++) {
        let v = rows[6 * (t - 1) + c];
        if (c === 3) v -= 1;
        t === 1 ? g.moveTo(x(t), y(v)) : g.lineTo(x(t), y(v));
      }
      g.stroke();
    });
    $("s-legend").innerHTML = CURVES.map(([n, c]) => `<span style="color:${c}">■ ${n}</span>`).join("");
    $("i-t").max = steps;
  });
}

function paint(id, pixels) {
  const g = $(id).getContext("2d");
  const img = g.createImageData(32, 32);
  pixels.forEach((p, i) => {
    img.data.set([p, p, p, 255], 4 * i);
  });
  g.putImageData(img, 0, 0);
}

function drawImages() {
  $("i-snr-v").textContent = ` ${num("i-snr")}`;
  $("i-t-v").textContent = ` ${num("i-t")}`;
  guard("i-err", () => {
    const seed = num("i-seed");
    const x0 = synthImage(seed);
    const xhat = transmitImage(x0, num("i-order"), num("i-rep"), num("i-snr"), 0.05, 0.1, seed);
    const xt = forwardPreview(x0, xhat, num("i-t"), num("s-steps"), num("s-b0"), num("s-b1"), seed);
    paint("i-x0", x0);
    paint("i-xhat", xhat);
    paint("i-xt", xt);
    const p = imagePsnr(x0, xhat);
    $("i-info").textContent =
      `original | received (κᵗ = 0.05, κʳ = 0.1), PSNR ${Number.isFinite(p) ? p.toFixed(2) + " dB" : "∞"} | x_t`;
  });
}

await init();
for (const id of ["c-order", "c-snr", "c-kt", "c-kr", "c-seed"]) $(id).addEventListener("input", drawScatter);
for (const id of ["s-steps", "s-b0", "s-b1"]) {
  $(id).addEventListener("input", () => { drawSchedule(); drawImages(); });
}
for (const id of ["i-seed", "i-order", "i-rep", "i-snr", "i-t"]) $(id).addEventListener("input", drawImages);
drawScatter();
drawSchedule();
drawImages();
