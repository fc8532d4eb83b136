/** DOM wiring: two SVG column gauges, pump controls, badges, and the
 * event strip, all fed by the poll loop. */

import { ApiClient, TagSnapshot } from "./api.js";
import { classifyLevel, bandClass, Band } from "./bands.js";
import { SpeedCommander } from "./control.js";
import { stripLines } from "./events.js";
import { Poller } from "./poll.js";
import { KnobPosition, applyKnob, knobFor, stepSpeed } from "./speed.js";

const SVG_NS = "http://www.w3.org/2000/svg";
const GAUGE_W = 90;
const GAUGE_H = 220;

interface Gauge {
  fill: SVGRectElement;
  readout: HTMLSpanElement;
  badge: HTMLSpanElement;
}

function buildGauge(host: HTMLElement, title: string): Gauge {
  const wrap = document.createElement("div");
  wrap.className = "gauge";

  const head = document.createElement("h2");
  head.textContent = title;
  wrap.appendChild(head);

  const svg = document.createElementNS(SVG_NS, "svg");
  svg.setAttribute("viewBox", `0 0 ${GAUGE_W} ${GAUGE_H}`);
  svg.setAttribute("class", "column");

  const shell = document.createElementNS(SVG_NS, "rect");
  shell.setAttribute("x", "10");
  shell.setAttribute("y", "5");
  shell.setAttribute("width", String(GAUGE_W - 20));
  shell.setAttribute("height", String(GAUGE_H - 10));
  shell.setAttribute("class", "shell");
  svg.appendChild(shell);

  const fill = document.createElementNS(SVG_NS, "rect");
  fill.setAttribute("x", "10");
  fill.setAttribute("width", String(GAUGE_W - 20));
  fill.setAttribute("class", "fill band-normal");
  svg.appendChild(fill);

  // threshold ticks at 5, 20, 80, 95 percent
  for (const mark of [5, 20, 80, 95]) {
    const y = 5 + (GAUGE_H - 10) * (1 - mark / 100);
    const tick = document.createElementNS(SVG_NS, "line");
    tick.setAttribute("x1", "10");
    tick.setAttribute("x2", String(GAUGE_W - 10));
    tick.setAttribute("y1", String(y));
    tick.setAttribute("y2", String(y));
    tick.setAttribute("class", "tick");
    svg.appendChild(tick);
  }
  wrap.appendChild(svg);

  const readout = document.createElement("span");
  readout.className = "readout";
  readout.textContent = "--.-";
  wrap.appendChild(readout);

  const badge = document.createElement("span");
  badge.className = "badge band-normal";
  badge.textContent = "NORMAL";
  wrap.appendChild(badge);

  host.appendChild(wrap);
  return { fill, readout, badge };
}

function setGauge(g: Gauge, level: number, band: Band): void {
  const clamped = Math.max(0, Math.min(100, level));
  const h = (GAUGE_H - 10) * (clamped / 100);
  g.fill.setAttribute("y", String(5 + (GAUGE_H - 10) - h));
  g.fill.setAttribute("height", String(h));
  g.fill.setAttribute("class", "fill " + bandClass(band));
  g.readout.textContent = level.toFixed(1);
  g.badge.textContent = band;
  g.badge.className = "badge " + bandClass(band);
}

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error("missing #" + id);
  return node as T;
}

export function boot(): void {
  const api = new ApiClient("");
  const gauges = el<HTMLDivElement>("gauges");
  const tank1 = buildGauge(gauges, "Tank 1");
  const tank2 = buildGauge(gauges, "Tank 2");

  const speedOut = el<HTMLSpanElement>("speed-value");
  const staleBadge = el<HTMLSpanElement>("stale");
  const alarmBadge = el<HTMLSpanElement>("alarm");
  const faultBadge = el<HTMLSpanElement>("fault");
  const writeError = el<HTMLParagraphElement>("write-error");
  const strip = el<HTMLUListElement>("events");

  function showSpeed(speed: number): void {
    speedOut.textContent = String(speed);
    for (const pos of ["Fwd", "Stp", "Rev"] as KnobPosition[]) {
      const button = el<HTMLButtonElement>("knob-" + pos.toLowerCase());
      button.setAttribute("aria-pressed", String(knobFor(speed) === pos));
    }
  }

  const commander = new SpeedCommander((v) => api.writeSpeed(v), {
    onRender: showSpeed,
    onError: (message) => {
      writeError.textContent = message ?? "";
      writeError.hidden = message === null;
    },
  });

  el<HTMLButtonElement>("step-up").addEventListener("click",
    () => void commander.act(stepSpeed(commander.value, 1)));
  el<HTMLButtonElement>("step-down").addEventListener("click",
    () => void commander.act(stepSpeed(commander.value, -1)));
  for (const pos of ["Fwd", "Stp", "Rev"] as KnobPosition[]) {
    el<HTMLButtonElement>("knob-" + pos.toLowerCase()).addEventListener(
      "click", () => void commander.act(applyKnob(commander.value, pos)));
  }

  function onSnapshot(snap: TagSnapshot): void {
    const t1 = snap.tags["Tank1Level"];
    const t2 = snap.tags["Tank2Level"];
    if (t1) setGauge(tank1, t1.value, t1.band ?? classifyLevel(t1.value));
    if (t2) setGauge(tank2, t2.value, t2.band ?? classifyLevel(t2.value));
    const speedTag = snap.tags["PumpSpeed"];
    if (speedTag) commander.fromPoll(speedTag.value);

    alarmBadge.textContent = snap.alarm ? "ALARM"
      : snap.warning ? "WARNING" : "OK";
    alarmBadge.className = "badge " + (snap.alarm ? "state-alarm"
      : snap.warning ? "state-warning" : "state-ok");
    faultBadge.hidden = !snap.poll_fault;

    void api.events().then((events) => {
      strip.replaceChildren(...stripLines(events).map((line) => {
        const item = document.createElement("li");
        item.textContent = line;
        return item;
      }));
    }).catch(() => undefined);
  }

  const poller = new Poller(api, {
    onSnapshot,
    onStale: (stale) => {
      staleBadge.hidden = !stale;
      // grey the last known values while the link is down
      document.body.classList.toggle("stale", stale);
    },
  });
  poller.start();
}

if (typeof document !== "undefined" && document.getElementById("gauges")) {
  boot();
}
