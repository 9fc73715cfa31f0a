import init, { escape_curve, pushforward, sample_abscissae, survivor_intervals } from "./pkg/openlsv_wasm.js";

const $ = (id) => document.getElementById(id);
const canvas = $("plot");
const ctx = canvas.getContext("2d");
const PAD = 45;

function params() {
  return { gamma: +$("gamma").value, hole: $("hole").value.trim(), t: Math.max(1, Math.round(+$("t").value)) };
}

function clear() {
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.strokeStyle = "#000";
  ctx.beginPath();
  ctx.moveTo(PAD, PAD / 2);
  ctx.lineTo(PAD, canvas.height - PAD);
  ctx.lineTo(canvas.width - PAD / 2, canvas.height - PAD);
  ctx.stroke();
}

function line(xs, ys, xlabel, ylabel) {
  clear();
  const pts = xs.map((x, i) => [x, ys[i]]).filter(([x, y]) => isFinite(x) && isFinite(y));
  if (pts.length < 2) return;
  const [x0, x1] = [Math.min(...pts.map((p) => p[0])), Math.max(...pts.map((p) => p[0]))];
  const [y0, y1] = [Math.min(...pts.map((p) => p[1])), Math.max(...pts.map((p) => p[1]))];
  const sx = (x) => PAD + ((x - x0) / (x1 - x0 || 1)) * (canvas.width - 1.5 * PAD);
  const sy = (y) => canvas.height - PAD - ((y - y0) / (y1 - y0 || 1)) * (canvas.height - 1.5 * PAD);
  ctx.strokeStyle = "#1f77b4";
  ctx.beginPath();
  pts.forEach(([x, y], i) => (i ? ctx.lineTo(sx(x), sy(y)) : ctx.moveTo(sx(x), sy(y))));
  ctx.stroke();
  ctx.fillStyle = "#000";
  ctx.fillText(`${xlabel}: ${x0.toFixed(2)} … ${x1.toFixed(2)}`, PAD, canvas.height - 15);
  ctx.fillText(`${ylabel}: ${y0.toFixed(2)} … ${y1.toFixed(2)}`, PAD + 5, PAD / 2 + 10);
}

function run(action) {
  $("status").textContent = "";
  try {
    action();
  } catch (e) {
    $("status").textContent = e.message ?? String(e);
  }
}

$("curve").onclick = () => run(() => {
  const { gamma, hole, t } = params();
  const m = escape_curve(gamma, hole, $("density").value, +$("alpha").value, t);
  const xs = [], ys = [];
  for (let k = 1; k < m.length; k++) if (m[k] > 0) { xs.push(Math.log10(k)); ys.push(Math.log10(m[k])); }
  const n = xs.length, lo = Math.floor(n / 2);
  const slope = (ys[n - 1] - ys[lo]) / (xs[n - 1] - xs[lo]);
  $("caption").textContent = `log-log survival; tail slope ≈ ${slope.toFixed(3)} (exponent ${(-slope).toFixed(3)})`;
  line(xs, ys, "log10 t", "log10 mass");
});

$("push").onclick = () => run(() => {
  const { gamma, hole, t } = params();
  const v = pushforward(gamma, hole, t, 200);
  const xs = Array.from(sample_abscissae(200), (x) => Math.log10(x));
  const ys = Array.from(v.slice(1), (y) => Math.log10(Math.max(y, 1e-300)));
  $("caption").textContent = `normalized density at t = ${t}; mass on [0, 0.05): ${v[0].toFixed(4)}`;
  line(xs, ys, "log10 x", "log10 density");
});

$("surv").onclick = () => run(() => {
  const { gamma, hole } = params();
  const t = Math.min(16, params().t);
  const iv = survivor_intervals(gamma, hole, t);
  clear();
  ctx.fillStyle = "#2ca02c";
  let mass = 0;
  const w = canvas.width - 1.5 * PAD;
  for (let k = 0; k < iv.length; k += 2) {
    mass += iv[k + 1] - iv[k];
    ctx.fillRect(PAD + iv[k] * w, canvas.height / 2 - 30, Math.max((iv[k + 1] - iv[k]) * w, 0.5), 60);
  }
  ctx.fillStyle = "#000";
  ctx.fillText("0", PAD, canvas.height / 2 + 50);
  ctx.fillText("1", PAD + w - 5, canvas.height / 2 + 50);
  $("caption").textContent = `survivor set at t = ${t}: ${iv.length / 2} intervals, Lebesgue mass ${mass.toFixed(6)}`;
});

await init();
$("status").textContent = "";
