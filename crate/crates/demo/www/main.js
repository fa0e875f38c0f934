// Glue between the page controls and the wasm exports.
// Build first: wasm-pack build crates/demo --target web --out-dir www/pkg

import init, { synth_pair, augment_sheet, Trainer } from "./pkg/starcycle_demo.js";

const $ = (id) => document.getElementById(id);
const SIDE = 64;
const SCALE = 3;

function drawFrame(canvas, frame, scale) {
  const w = frame.width, h = frame.height;
  const img = new ImageData(new Uint8ClampedArray(frame.pixels()), w, h);
  const off = new OffscreenCanvas(w, h);
  off.getContext("2d").putImageData(img, 0, 0);
  canvas.width = w * scale;
  canvas.height = h * scale;
  const ctx = canvas.getContext("2d");
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(off, 0, 0, canvas.width, canvas.height);
}

const sliders = [
  ["stars", "stars-v", (v) => v],
  ["psf", "psf-v", (v) => (v / 10).toFixed(1)],
  ["noise", "noise-v", (v) => (v / 100).toFixed(2)],
  ["blur", "blur-v", (v) => (v / 10).toFixed(1)],
  ["glow", "glow-v", (v) => (v / 100).toFixed(2)],
];

function params() {
  return {
    stars: Number($("stars").value),
    psf: Number($("psf").value) / 10,
    noise: Number($("noise").value) / 100,
    blur: Number($("blur").value) / 10,
    glow: Number($("glow").value) / 100,
    seed: BigInt($("seed").value || 0),
  };
}

function regenerate() {
  const p = params();
  const [clean, degraded] = synth_pair(SIDE, p.stars, p.psf, p.noise, p.blur, p.seed);
  drawFrame($("clean"), clean, SCALE);
  drawFrame($("degraded"), degraded, SCALE);
}

function reaugment() {
  const p = params();
  drawFrame($("sheet"), augment_sheet(24, p.seed, p.blur, p.glow), 2);
}

let trainer = null;

function resetTrainer() {
  const p = params();
  trainer = new Trainer(p.seed, 32, 24);
  $("train-status").textContent = "fresh model, 24 synthetic pairs, step 0";
  drawFrame($("triptych"), trainer.triptych(), SCALE);
}

function trainSteps(n) {
  if (!trainer) resetTrainer();
  const buttons = [$("train10"), $("train50"), $("reset")];
  buttons.forEach((b) => (b.disabled = true));
  $("train-status").textContent = `training ${n} steps…`;
  // Yield to the browser so the status paints before the heavy work.
  setTimeout(() => {
    const t0 = performance.now();
    const [step, cyc, total] = trainer.run_steps(n);
    const dt = ((performance.now() - t0) / 1000).toFixed(1);
    $("train-status").textContent =
      `step ${step} · cycle loss ${cyc.toFixed(4)} · G total ${total.toFixed(3)} · ${dt}s`;
    drawFrame($("triptych"), trainer.triptych(), SCALE);
    buttons.forEach((b) => (b.disabled = false));
  }, 20);
}

await init();

for (const [id, vid, fmt] of sliders) {
  $(id).addEventListener("input", () => {
    $(vid).textContent = fmt(Number($(id).value));
  });
}
$("gen").addEventListener("click", regenerate);
$("aug").addEventListener("click", reaugment);
$("reset").addEventListener("click", resetTrainer);
$("train10").addEventListener("click", () => trainSteps(10));
$("train50").addEventListener("click", () => trainSteps(50));

regenerate();
reaugment();
resetTrainer();
