import init, { network, em_trace, sanger_rho_sweep } from "./pkg/dbpi_web.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function axes(ctx, w, h, pad) {
  ctx.clearRect(0, 0, w, h);
  ctx.strokeStyle = "#999";
  ctx.beginPath();
  ctx.moveTo(pad, pad);
  ctx.lineTo(pad, h - pad);
  ctx.lineTo(w - pad, h - pad);
  ctx.stroke();
}

function drawNetwork() {
  const c = $("g-canvas");
  const ctx = c.getContext("2d");
  try {
    const net = network(num("g-n"), num("g-r"), num("g-seed"));
    const p = net.positions();
    const e = net.edges();
    const s = c.width;
    ctx.clearRect(0, 0, s, s);
    ctx.strokeStyle = "#9ab";
    for (let i = 0; i < e.length; i += 2) {
      ctx.beginPath();
      ctx.moveTo(p[2 * e[i]] * s, (1 - p[2 * e[i] + 1]) * s);
      ctx.lineTo(p[2 * e[i + 1]] * s, (1 - p[2 * e[i + 1] + 1]) * s);
      ctx.stroke();
    }
    const deg = net.degrees();
    for (let i = 0; i < p.length / 2; i++) {
      ctx.fillStyle = deg[i] === 1 ? "#d33" : "#246";
      ctx.beginPath();
      ctx.arc(p[2 * i] * s, (1 - p[2 * i + 1]) * s, 4, 0, 2 * Math.PI);
      ctx.fill();
    }
    $("g-out").textContent =
      `edges ${e.length / 2}, min degree ${Math.min(...deg)}, consensus rho ${net.consensus_rho.toFixed(5)}`;
  } catch (err) {
    $("g-out").textContent = String(err);
  }
}

function drawTrace() {
  const c = $("e-canvas");
  const ctx = c.getContext("2d");
  const pad = 30;
  axes(ctx, c.width, c.height, pad);
  $("e-out").textContent = "running...";
  setTimeout(() => {
    try {
      const t = em_trace(num("g-n"), num("g-r"), num("e-snr"), num("e-alpha"), num("e-iters"), num("g-seed"));
      if (t.diverged) {
        $("e-out").textContent = "run left the parameter domain (diverged)";
        return;
      }
      const k = t.iterations();
      const e = Array.from(t.errors()).map((v) => Math.log10(Math.max(v, 1e-300)));
      const lo = Math.min(...e), hi = Math.max(...e);
      const kmax = k[k.length - 1] || 1;
      const x = (i) => pad + (k[i] / kmax) * (c.width - 2 * pad);
      const y = (v) => c.height - pad - ((v - lo) / (hi - lo || 1)) * (c.height - 2 * pad);
      ctx.strokeStyle = "#c50";
      ctx.beginPath();
      e.forEach((v, i) => (i ? ctx.lineTo(x(i), y(v)) : ctx.moveTo(x(i), y(v))));
      ctx.stroke();
      ctx.fillStyle = "#444";
      ctx.fillText(`1e${hi.toFixed(1)}`, 2, pad);
      ctx.fillText(`1e${lo.toFixed(1)}`, 2, c.height - pad);
      ctx.fillText(`${kmax}`, c.width - pad - 20, c.height - 10);
      $("e-out").textContent = `final error ${Math.pow(10, e[e.length - 1]).toExponential(3)} at iteration ${kmax}`;
    } catch (err) {
      $("e-out").textContent = String(err);
    }
  }, 10);
}

function drawSweep() {
  const c = $("s-canvas");
  const ctx = c.getContext("2d");
  const pad = 30;
  axes(ctx, c.width, c.height, pad);
  try {
    const lambdas = new Float64Array($("s-l").value.split(",").map(Number));
    const out = sanger_rho_sweep(lambdas, num("s-m"), 60, 1.3);
    const star = out[0];
    const r = [], rho = [];
    for (let i = 1; i < out.length; i += 2) {
      r.push(out[i]);
      rho.push(out[i + 1]);
    }
    const top = Math.max(1.2, ...rho);
    const x = (v) => pad + (v / 1.3) * (c.width - 2 * pad);
    const y = (v) => c.height - pad - (v / top) * (c.height - 2 * pad);
    ctx.strokeStyle = "#ccc";
    ctx.beginPath();
    ctx.moveTo(pad, y(1));
    ctx.lineTo(c.width - pad, y(1));
    ctx.moveTo(x(1), pad);
    ctx.lineTo(x(1), c.height - pad);
    ctx.stroke();
    ctx.strokeStyle = "#263";
    ctx.beginPath();
    r.forEach((v, i) => (i ? ctx.lineTo(x(v), y(rho[i])) : ctx.moveTo(x(v), y(rho[i]))));
    ctx.stroke();
    ctx.fillStyle = "#444";
    ctx.fillText("rho = 1", pad + 4, y(1) - 4);
    ctx.fillText("eta / eta*", c.width - pad - 50, c.height - 10);
    $("s-out").textContent = `eta* = ${star.toPrecision(6)}`;
  } catch (err) {
    $("s-out").textContent = String(err);
  }
}

await init();
$("g-go").onclick = drawNetwork;
$("e-go").onclick = drawTrace;
$("s-go").onclick = drawSweep;
drawNetwork();
drawSweep();
