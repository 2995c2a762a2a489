import init, { scenario_names, run_scenario, push, distribute } from "./pkg/dcm_stabilizer_web.js";

const STRIDE = 7;
const $ = (id) => document.getElementById(id);

// DCM error norm and its components against time.
function plotEpisode(canvas, episode) {
  const s = episode.series;
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  ctx.clearRect(0, 0, w, h);
  const n = s.length / STRIDE;
  if (n < 2) return;
  const tEnd = s[(n - 1) * STRIDE];
  const err = [];
  let peak = 0.01;
  for (let i = 0; i < n; i++) {
    const o = i * STRIDE;
    const ex = s[o + 1] - s[o + 3];
    const ey = s[o + 2] - s[o + 4];
    err.push([s[o], ex, ey, Math.hypot(ex, ey)]);
    peak = Math.max(peak, Math.abs(ex), Math.abs(ey));
  }
  const pad = 40;
  const x = (t) => pad + (t / tEnd) * (w - 2 * pad);
  const y = (v) => h / 2 - (v / peak) * (h / 2 - 20);
  ctx.strokeStyle = "#999";
  ctx.beginPath();
  ctx.moveTo(pad, h / 2);
  ctx.lineTo(w - pad, h / 2);
  ctx.stroke();
  ctx.fillStyle = "#555";
  ctx.fillText(`±${(peak * 1000).toFixed(1)} mm`, 4, 14);
  ctx.fillText(`${tEnd.toFixed(1)} s`, w - pad, h / 2 + 14);
  const colors = ["#1f77b4", "#d62728", "#222"];
  const names = ["x error", "y error", "norm"];
  for (let k = 0; k < 3; k++) {
    ctx.strokeStyle = colors[k];
    ctx.beginPath();
    err.forEach((e, i) => (i ? ctx.lineTo(x(e[0]), y(e[k + 1])) : ctx.moveTo(x(e[0]), y(e[k + 1]))));
    ctx.stroke();
    ctx.fillStyle = colors[k];
    ctx.fillText(names[k], w - pad - 140 + 50 * k, 14);
  }
  const ft = episode.fall_time;
  if (!Number.isNaN(ft)) {
    ctx.strokeStyle = "#d62728";
    ctx.setLineDash([4, 4]);
    ctx.beginPath();
    ctx.moveTo(x(ft), 0);
    ctx.lineTo(x(ft), h);
    ctx.stroke();
    ctx.setLineDash([]);
  }
  return err.reduce((m, e) => Math.max(m, e[3]), 0);
}

function runAndPlot(canvas, status, run) {
  status.textContent = "running...";
  setTimeout(() => {
    try {
      const t0 = performance.now();
      const ep = run();
      const peak = plotEpisode(canvas, ep);
      const ms = performance.now() - t0;
      status.textContent = `${ep.message}; peak DCM error ${(peak * 1000).toFixed(1)} mm; ${ms.toFixed(0)} ms`;
      ep.free();
    } catch (e) {
      status.textContent = `error: ${e}`;
    }
  }, 10);
}

// Feet view: 1 px = 1 mm around the origin, x forward is up on screen.
const feet = { zmp: [0, 0] };
const SCALE = 1000;
function toScreen(c, [px, py]) {
  return [c.width / 2 - py * SCALE, c.height / 2 - px * SCALE];
}

function drawFeet() {
  const c = $("feet");
  const ctx = c.getContext("2d");
  ctx.clearRect(0, 0, c.width, c.height);
  const rho = parseFloat($("rho").value);
  let r;
  try {
    r = distribute(feet.zmp[0], feet.zmp[1], rho);
  } catch (e) {
    $("dist-status").textContent = `error: ${e}`;
    return;
  }
  const total = r[0] + r[1];
  for (const [cy, fz, copx, copy] of [[0.1, r[0], r[2], r[3]], [-0.1, r[1], r[4], r[5]]]) {
    const [sx, sy] = toScreen(c, [0.112, cy + 0.065]);
    ctx.fillStyle = `rgba(31,119,180,${0.15 + 0.6 * fz / total})`;
    ctx.fillRect(sx, sy, 130, 224);
    ctx.strokeStyle = "#1f77b4";
    ctx.strokeRect(sx, sy, 130, 224);
    const [qx, qy] = toScreen(c, [copx, copy]);
    ctx.fillStyle = "#1f77b4";
    ctx.beginPath();
    ctx.arc(qx, qy, 5, 0, 2 * Math.PI);
    ctx.fill();
  }
  const [zx, zy] = toScreen(c, feet.zmp);
  ctx.strokeStyle = "#d62728";
  ctx.beginPath();
  ctx.moveTo(zx - 8, zy);
  ctx.lineTo(zx + 8, zy);
  ctx.moveTo(zx, zy - 8);
  ctx.lineTo(zx, zy + 8);
  ctx.stroke();
  const [ax, ay] = toScreen(c, [r[6], r[7]]);
  ctx.strokeStyle = "#222";
  ctx.beginPath();
  ctx.arc(ax, ay, 7, 0, 2 * Math.PI);
  ctx.stroke();
  $("dist-status").textContent =
    `left ${r[0].toFixed(1)} N  right ${r[1].toFixed(1)} N\n` +
    `desired ZMP (${(feet.zmp[0] * 1000).toFixed(0)}, ${(feet.zmp[1] * 1000).toFixed(0)}) mm  ` +
    `achieved (${(r[6] * 1000).toFixed(1)}, ${(r[7] * 1000).toFixed(1)}) mm  cost ${r[8].toExponential(3)}`;
}

await init();

for (const name of scenario_names().split("\n")) {
  const o = document.createElement("option");
  o.value = o.textContent = name;
  $("scenario").appendChild(o);
}
$("scenario").value = "flat_walk";
$("scenario-run").onclick = () =>
  runAndPlot($("scenario-plot"), $("scenario-status"), () => run_scenario($("scenario").value, $("scenario-stab").checked));

for (const id of ["push-x", "push-y"]) {
  $(id).oninput = () => ($(`${id}-val`).textContent = $(id).value);
}
$("push-run").onclick = () =>
  runAndPlot($("push-plot"), $("push-status"), () =>
    push(parseFloat($("push-x").value), parseFloat($("push-y").value), $("push-stab").checked));

$("feet").onclick = (ev) => {
  const c = $("feet");
  const b = c.getBoundingClientRect();
  const sx = ev.clientX - b.left;
  const sy = ev.clientY - b.top;
  feet.zmp = [(c.height / 2 - sy) / SCALE, (c.width / 2 - sx) / SCALE];
  drawFeet();
};
$("rho").oninput = () => {
  $("rho-val").textContent = parseFloat($("rho").value).toFixed(2);
  drawFeet();
};
drawFeet();
