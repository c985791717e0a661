import init, { stationary_comparison, omega_collapse, trust_dynamics } from "./pkg/defta_web.js";

const COLORS = { target: "#555", naive: "#d62728", corrected: "#1f77b4", acc: "#2ca02c" };
const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function legend(id, entries) {
  $(id).innerHTML = entries.map(([name, c]) => `<span><i style="background:${c}"></i>${name}</span>`).join("");
}

function frame(canvas) {
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  return { ctx, w: canvas.width, h: canvas.height, pad: 36 };
}

function axes({ ctx, w, h, pad }, yLabel) {
  ctx.strokeStyle = "#999";
  ctx.beginPath();
  ctx.moveTo(pad, pad / 2);
  ctx.lineTo(pad, h - pad);
  ctx.lineTo(w - 8, h - pad);
  ctx.stroke();
  ctx.fillStyle = "#444";
  ctx.fillText(yLabel, 4, 12);
}

function drawBars(s) {
  const f = frame($("st-canvas"));
  axes(f, "share");
  const { ctx, w, h, pad } = f;
  const series = [["target", s.target], ["naive", s.naive], ["corrected", s.corrected]];
  const max = Math.max(...series.flatMap(([, v]) => v)) * 1.1;
  const group = (w - pad - 10) / s.n;
  const bar = group / 4;
  for (let i = 0; i < s.n; i++) {
    series.forEach(([name, v], k) => {
      const bh = (v[i] / max) * (h - 1.5 * pad);
      ctx.fillStyle = COLORS[name];
      ctx.fillRect(pad + i * group + k * bar + bar / 2, h - pad - bh, bar - 1, bh);
    });
    ctx.fillStyle = "#444";
    ctx.fillText(`${i}`, pad + i * group + group / 2 - 4, h - pad + 14);
    ctx.fillText(`d=${s.outdegrees[i]}`, pad + i * group + group / 2 - 10, h - pad + 26);
  }
  legend("st-legend", series.map(([n]) => [n, COLORS[n]]));
  $("st-out").textContent =
    `L1 to data shares: naive ${s.naive_l1.toExponential(3)}, corrected ${s.corrected_l1.toExponential(3)}`;
}

function drawLines(canvasId, xs, lines, { log = false, yMax = null, yLabel = "" } = {}) {
  const f = frame($(canvasId));
  axes(f, yLabel);
  const { ctx, w, h, pad } = f;
  const tf = (y) => (log ? Math.log10(Math.max(y, 1e-16)) : y);
  const all = lines.flatMap((l) => l.ys.filter(Number.isFinite).map(tf));
  const lo = log ? Math.min(...all) : 0;
  const hi = yMax ?? Math.max(...all);
  const sx = (x) => pad + ((x - xs[0]) / Math.max(1, xs[xs.length - 1] - xs[0])) * (w - pad - 12);
  const sy = (y) => h - pad - ((tf(y) - lo) / Math.max(1e-12, hi - lo)) * (h - 1.5 * pad);
  for (const l of lines) {
    ctx.strokeStyle = l.color;
    ctx.lineWidth = 2;
    ctx.beginPath();
    let started = false;
    l.ys.forEach((y, i) => {
      if (!Number.isFinite(y)) return;
      started ? ctx.lineTo(sx(xs[i]), sy(y)) : ctx.moveTo(sx(xs[i]), sy(y));
      started = true;
    });
    ctx.stroke();
  }
  ctx.fillStyle = "#444";
  ctx.fillText(log ? `1e${hi.toFixed(1)}` : hi.toFixed(2), 2, pad / 2 + 10);
  ctx.fillText(log ? `1e${lo.toFixed(1)}` : "0", 2, h - pad);
  ctx.fillText(`${xs[xs.length - 1]}`, w - 30, h - pad + 14);
}

function topoArgs() {
  return [num("st-n"), num("st-d"), num("st-seed")];
}

function runStationary() {
  try {
    drawBars(JSON.parse(stationary_comparison(...topoArgs())));
  } catch (e) {
    $("st-out").textContent = `error: ${e}`;
  }
}

function runCollapse() {
  const steps = num("om-steps");
  const c = JSON.parse(omega_collapse(...topoArgs(), steps));
  const xs = c.naive.map((_, i) => i);
  drawLines("om-canvas", xs, [
    { ys: c.naive, color: COLORS.naive },
    { ys: c.corrected, color: COLORS.corrected },
  ], { log: true, yLabel: "L1" });
  legend("om-legend", [["naive", COLORS.naive], ["corrected", COLORS.corrected]]);
}

function runTrust() {
  $("tr-out").textContent = "running...";
  setTimeout(() => {
    const t0 = performance.now();
    const t = JSON.parse(trust_dynamics(num("tr-k"), num("tr-e"), num("tr-seed")));
    drawLines("tr-canvas", t.epochs, [
      { ys: t.attacker_theta, color: COLORS.naive },
      { ys: t.honest_theta, color: COLORS.corrected },
      { ys: t.honest_acc, color: COLORS.acc },
    ], { yMax: 1, yLabel: "weight / acc" });
    legend("tr-legend", [
      ["attacker weight", COLORS.naive],
      ["honest peer weight", COLORS.corrected],
      ["honest test accuracy", COLORS.acc],
    ]);
    const last = t.epochs.length - 1;
    $("tr-out").textContent =
      `final accuracy ${t.honest_acc[last].toFixed(3)}, attacker weight ${t.attacker_theta[last].toExponential(2)}, ` +
      `${t.restores} model restores, ${(performance.now() - t0).toFixed(0)} ms`;
  }, 10);
}

await init();
$("st-go").onclick = () => { runStationary(); runCollapse(); };
$("om-go").onclick = runCollapse;
$("tr-go").onclick = runTrust;
$("tr-k").oninput = () => { $("tr-k-val").textContent = $("tr-k").value; };
runStationary();
runCollapse();
runTrust();
