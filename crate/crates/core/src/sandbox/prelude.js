// Evaluated once per run, before the widget script. Returns the host-side
// entry points; nothing here is reachable from the widget by name.
(function (global, hostBlocked) {
  'use strict';

  const stringify = JSON.stringify;
  const parse = JSON.parse;
  const isArray = Array.isArray;
  const defineProperty = Object.defineProperty;

  // Determinism: fixed clock and seeded Math.random (mulberry32).
  const FIXED_TIME = 1704067200000;
  let seed = 0x2f6b3c1d;
  Math.random = function random() {
    seed = (seed + 0x6d2b79f5) | 0;
    let t = Math.imul(seed ^ (seed >>> 15), 1 | seed);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
  const RealDate = Date;
  function FixedDate(...args) {
    if (!new.target) return new RealDate(FIXED_TIME).toString();
    return args.length ? new RealDate(...args) : new RealDate(FIXED_TIME);
  }
  FixedDate.prototype = RealDate.prototype;
  FixedDate.now = function now() { return FIXED_TIME; };
  FixedDate.UTC = RealDate.UTC;
  FixedDate.parse = RealDate.parse;
  global.Date = FixedDate;

  // Host access. Every attempt is reported to the host before throwing, so
  // catching the error does not hide it.
  function deny(name) {
    hostBlocked(name);
    throw new Error(name + ' is not available to widget callbacks');
  }
  const CALLABLE = [
    'fetch', 'XMLHttpRequest', 'WebSocket', 'EventSource', 'importScripts', 'require', 'open',
    'setTimeout', 'setInterval', 'setImmediate', 'queueMicrotask', 'requestAnimationFrame',
    'Worker', 'SharedWorker', 'BroadcastChannel', 'postMessage', 'alert', 'prompt', 'confirm',
  ];
  for (const name of CALLABLE) {
    defineProperty(global, name, { value: function () { deny(name); }, writable: false, configurable: false });
  }
  const HOST_OBJECTS = [
    'process', 'Deno', 'Bun', 'localStorage', 'sessionStorage', 'indexedDB', 'navigator', 'location',
    'caches', 'os', 'std', 'fs', 'scriptArgs', 'print',
  ];
  for (const name of HOST_OBJECTS) {
    defineProperty(global, name, { get: function () { deny(name); }, configurable: false });
  }
  const console = {};
  for (const name of ['log', 'info', 'warn', 'error', 'debug', 'trace']) console[name] = function () {};
  global.console = console;
  global.window = global;
  global.self = global;

  // Scoped document over the widget markup.
  let nodes = [];
  let elements = [];

  function unescapeCss(s) {
    return s.replace(/\\([0-9a-fA-F]{1,6}\s?|[^])/g, function (_, e) {
      return /^[0-9a-fA-F]/.test(e) ? String.fromCodePoint(parseInt(e, 16)) : e;
    });
  }

  function attrOf(node, name) {
    name = String(name).toLowerCase();
    for (const [k, v] of node.attrs) if (k === name) return v;
    return null;
  }

  function setAttr(node, name, value) {
    name = String(name).toLowerCase();
    value = String(value);
    for (const pair of node.attrs) {
      if (pair[0] === name) { pair[1] = value; return; }
    }
    node.attrs.push([name, value]);
  }

  // Selector support: type, universal, #id, .class, [attr op value],
  // :checked/:selected/:disabled/:enabled, descendant and child combinators,
  // comma lists.
  const SIMPLE = /^(?:(\*|[a-zA-Z][\w-]*)|#((?:\\[^]|[\w-]|[^\x00-\x7f])+)|\.((?:\\[^]|[\w-]|[^\x00-\x7f])+)|\[\s*([\w:-]+)\s*(?:([~^$*|]?=)\s*(?:"((?:\\[^]|[^"\\])*)"|'((?:\\[^]|[^'\\])*)'|([^\]\s]+))\s*)?\]|:([\w-]+))/;

  function parseSelector(text) {
    const groups = [];
    let compounds = [];
    let combinators = [];
    let current = null;
    let pending = null;
    let s = String(text).trim();
    const fail = function () { throw new SyntaxError("unsupported selector '" + text + "'"); };
    const flush = function () {
      if (current) {
        if (compounds.length) combinators.push(pending || ' ');
        compounds.push(current);
        current = null;
        pending = null;
      }
    };
    while (s.length) {
      let m = /^\s*([>,])\s*/.exec(s);
      if (m) {
        if (!current) fail();
        flush();
        if (m[1] === ',') {
          groups.push({ compounds, combinators });
          compounds = [];
          combinators = [];
        } else {
          pending = '>';
        }
        s = s.slice(m[0].length);
        continue;
      }
      m = /^\s+/.exec(s);
      if (m) {
        flush();
        s = s.slice(m[0].length);
        continue;
      }
      m = SIMPLE.exec(s);
      if (!m) fail();
      if (!current) current = [];
      if (m[1] !== undefined) current.push({ kind: 'tag', name: m[1].toLowerCase() });
      else if (m[2] !== undefined) current.push({ kind: 'id', value: unescapeCss(m[2]) });
      else if (m[3] !== undefined) current.push({ kind: 'class', value: unescapeCss(m[3]) });
      else if (m[4] !== undefined) {
        const raw = m[6] !== undefined ? m[6] : m[7] !== undefined ? m[7] : m[8];
        current.push({ kind: 'attr', name: m[4].toLowerCase(), op: m[5], value: raw === undefined ? undefined : unescapeCss(raw) });
      } else {
        const pseudo = m[9].toLowerCase();
        if (['checked', 'selected', 'disabled', 'enabled'].indexOf(pseudo) < 0) fail();
        current.push({ kind: 'pseudo', name: pseudo });
      }
      s = s.slice(m[0].length);
    }
    if (!current) fail();
    flush();
    groups.push({ compounds, combinators });
    return groups;
  }

  function matchSimple(el, t) {
    const node = el.__node;
    switch (t.kind) {
      case 'tag': return t.name === '*' || node.tag === t.name;
      case 'id': return attrOf(node, 'id') === t.value;
      case 'class': return (attrOf(node, 'class') || '').split(/\s+/).indexOf(t.value) >= 0;
      case 'attr': {
        const v = attrOf(node, t.name);
        if (v === null) return false;
        switch (t.op) {
          case undefined: return true;
          case '=': return v === t.value;
          case '~=': return v.split(/\s+/).indexOf(t.value) >= 0;
          case '^=': return t.value !== '' && v.startsWith(t.value);
          case '$=': return t.value !== '' && v.endsWith(t.value);
          case '*=': return t.value !== '' && v.indexOf(t.value) >= 0;
          case '|=': return v === t.value || v.startsWith(t.value + '-');
        }
        return false;
      }
      case 'pseudo':
        switch (t.name) {
          case 'checked': return (node.tag === 'input' && node.checked) || (node.tag === 'option' && node.selected);
          case 'selected': return node.tag === 'option' && node.selected;
          case 'disabled': return attrOf(node, 'disabled') !== null;
          case 'enabled': return attrOf(node, 'disabled') === null;
        }
    }
    return false;
  }

  function matchComplex(el, group) {
    const { compounds, combinators } = group;
    const at = function (e, k) {
      if (!compounds[k].every(function (t) { return matchSimple(e, t); })) return false;
      if (k === 0) return true;
      if (combinators[k - 1] === '>') return e.parentElement !== null && at(e.parentElement, k - 1);
      for (let p = e.parentElement; p; p = p.parentElement) if (at(p, k - 1)) return true;
      return false;
    };
    return at(el, compounds.length - 1);
  }

  function matches(el, selector) {
    return parseSelector(selector).some(function (g) { return matchComplex(el, g); });
  }

  function nodeList(items) {
    const list = items.slice();
    list.item = function (i) { return list[i] === undefined ? null : list[i]; };
    return list;
  }

  function descendantsOf(index) {
    const out = [];
    const stack = nodes[index].children.slice().reverse();
    while (stack.length) {
      const i = stack.pop();
      out.push(elements[i]);
      for (let j = nodes[i].children.length - 1; j >= 0; j--) stack.push(nodes[i].children[j]);
    }
    return out;
  }

  function optionValue(node) {
    const v = attrOf(node, 'value');
    return v !== null ? v : node.text.trim();
  }

  function textOf(index) {
    let out = nodes[index].text;
    for (const c of nodes[index].children) out += textOf(c);
    return out;
  }

  function Element(index) {
    this.__index = index;
    this.__node = nodes[index];
    this.style = {};
  }
  const proto = Element.prototype;
  function getter(name, get, set) {
    defineProperty(proto, name, { get: get, set: set, configurable: false });
  }
  getter('tagName', function () { return this.__node.tag.toUpperCase(); });
  getter('nodeName', function () { return this.__node.tag.toUpperCase(); });
  getter('id', function () { return attrOf(this.__node, 'id') || ''; });
  getter('name', function () { return attrOf(this.__node, 'name') || ''; });
  getter('className', function () { return attrOf(this.__node, 'class') || ''; });
  getter('classList', function () {
    const cls = this.className.split(/\s+/).filter(Boolean);
    return { contains: function (c) { return cls.indexOf(c) >= 0; }, length: cls.length };
  });
  getter('type', function () {
    const t = attrOf(this.__node, 'type');
    if (this.__node.tag === 'select') return attrOf(this.__node, 'multiple') !== null ? 'select-multiple' : 'select-one';
    if (this.__node.tag === 'textarea') return 'textarea';
    return t === null ? (this.__node.tag === 'input' ? 'text' : '') : t.toLowerCase();
  });
  getter('min', function () { return attrOf(this.__node, 'min') || ''; });
  getter('max', function () { return attrOf(this.__node, 'max') || ''; });
  getter('step', function () { return attrOf(this.__node, 'step') || ''; });
  getter('disabled', function () { return attrOf(this.__node, 'disabled') !== null; });
  getter('dataset', function () {
    const out = {};
    for (const [k, v] of this.__node.attrs) {
      if (k.startsWith('data-')) out[k.slice(5).replace(/-([a-z])/g, function (_, c) { return c.toUpperCase(); })] = v;
    }
    return out;
  });
  getter('value', function () {
    const node = this.__node;
    if (node.tag === 'select') {
      const sel = this.options.find(function (o) { return o.__node.selected; });
      return sel ? optionValue(sel.__node) : '';
    }
    if (node.tag === 'option') return optionValue(node);
    return node.value;
  }, function (v) {
    const node = this.__node;
    v = String(v);
    if (node.tag === 'select') {
      let found = false;
      for (const o of this.options) {
        o.__node.selected = !found && optionValue(o.__node) === v;
        found = found || o.__node.selected;
      }
    } else {
      node.value = v;
    }
  });
  getter('valueAsNumber', function () {
    const v = this.value;
    return v === '' ? NaN : Number(v);
  });
  getter('checked', function () { return this.__node.checked; }, function (v) {
    const node = this.__node;
    node.checked = Boolean(v);
    if (node.checked && this.type === 'radio' && this.name) {
      for (const e of elements) {
        if (e !== this && e.type === 'radio' && e.name === this.name) e.__node.checked = false;
      }
    }
  });
  getter('selected', function () { return this.__node.selected; }, function (v) { this.__node.selected = Boolean(v); });
  getter('options', function () {
    return nodeList(descendantsOf(this.__index).filter(function (e) { return e.__node.tag === 'option'; }));
  });
  getter('selectedOptions', function () {
    return nodeList(this.options.filter(function (o) { return o.__node.selected; }));
  });
  getter('selectedIndex', function () {
    return this.options.findIndex(function (o) { return o.__node.selected; });
  }, function (i) {
    this.options.forEach(function (o, k) { o.__node.selected = k === i; });
  });
  getter('text', function () { return textOf(this.__index); });
  getter('textContent', function () { return textOf(this.__index); }, function (v) {
    this.__node.text = String(v);
    this.__node.children = [];
  });
  getter('innerText', function () { return textOf(this.__index); }, function (v) {
    this.__node.text = String(v);
    this.__node.children = [];
  });
  getter('parentElement', function () {
    const p = this.__node.parent;
    return p === null || p === undefined ? null : elements[p];
  });
  getter('parentNode', function () { return this.parentElement; });
  getter('children', function () {
    return nodeList(this.__node.children.map(function (i) { return elements[i]; }));
  });
  proto.getAttribute = function (n) { return attrOf(this.__node, n); };
  proto.hasAttribute = function (n) { return attrOf(this.__node, n) !== null; };
  proto.setAttribute = function (n, v) { setAttr(this.__node, n, v); };
  proto.querySelectorAll = function (sel) {
    return nodeList(descendantsOf(this.__index).filter(function (e) { return matches(e, sel); }));
  };
  proto.querySelector = function (sel) { return this.querySelectorAll(sel).item(0); };
  proto.matches = function (sel) { return matches(this, sel); };
  proto.closest = function (sel) {
    for (let e = this; e; e = e.parentElement) if (matches(e, sel)) return e;
    return null;
  };
  proto.getElementsByTagName = function (t) { return this.querySelectorAll(t); };
  proto.addEventListener = function () {};
  proto.removeEventListener = function () {};
  proto.dispatchEvent = function () { return true; };
  proto.focus = function () {};
  proto.blur = function () {};

  const document = {
    getElementById: function (id) {
      id = String(id);
      return elements.find(function (e) { return attrOf(e.__node, 'id') === id; }) || null;
    },
    querySelectorAll: function (sel) {
      return nodeList(elements.filter(function (e) { return matches(e, sel); }));
    },
    querySelector: function (sel) { return document.querySelectorAll(sel).item(0); },
    getElementsByName: function (n) {
      n = String(n);
      return nodeList(elements.filter(function (e) { return attrOf(e.__node, 'name') === n; }));
    },
    getElementsByTagName: function (t) { return document.querySelectorAll(t); },
    getElementsByClassName: function (c) {
      return nodeList(elements.filter(function (e) { return e.classList.contains(String(c)); }));
    },
    addEventListener: function () {},
    removeEventListener: function () {},
  };
  defineProperty(document, 'cookie', { get: function () { deny('document.cookie'); }, set: function () { deny('document.cookie'); } });
  defineProperty(document, 'body', { get: function () { return elements[0] || null; } });
  defineProperty(document, 'documentElement', { get: function () { return elements[0] || null; } });
  global.document = document;

  function describe(e) {
    if (e && typeof e === 'object' && 'message' in e) {
      const name = e.name ? String(e.name) : 'Error';
      return name + ': ' + String(e.message);
    }
    try { return 'thrown value: ' + String(e); } catch (_) { return 'thrown value'; }
  }

  function kindOf(v) {
    if (v === null) return 'null';
    if (isArray(v)) return 'array of length ' + v.length;
    return typeof v;
  }

  return {
    setup: function (domJson) {
      nodes = parse(domJson).elements;
      elements = nodes.map(function (_, i) { return new Element(i); });
    },
    describe: describe,
    invoke: function (targetIndex, chartJson) {
      const finish = function (out) {
        out.dom = { elements: nodes };
        return stringify(out);
      };
      if (typeof callback !== 'function') {
        return finish({ status: 'exception', message: 'ReferenceError: callback is not defined as a function' });
      }
      const target = elements[targetIndex];
      const event = {
        type: 'change',
        target: target,
        currentTarget: target,
        preventDefault: function () {},
        stopPropagation: function () {},
      };
      let result;
      try {
        result = callback(event, parse(chartJson));
      } catch (e) {
        return finish({ status: 'exception', message: describe(e) });
      }
      if (!isArray(result) || result.length !== 2) {
        return finish({ status: 'bad_return_shape', message: 'expected [transforms, chart], got ' + kindOf(result) });
      }
      let transforms = result[0];
      const chart = result[1];
      if (transforms === null || transforms === undefined) transforms = [];
      if (!isArray(transforms)) {
        return finish({ status: 'bad_return_shape', message: 'transforms must be an array, got ' + kindOf(transforms) });
      }
      for (let i = 0; i < transforms.length; i++) {
        const t = transforms[i];
        if (t === null || typeof t !== 'object' || isArray(t)) {
          return finish({ status: 'bad_return_shape', message: 'transform ' + i + ' must be an object, got ' + kindOf(t) });
        }
      }
      if (chart === null || typeof chart !== 'object' || isArray(chart)) {
        return finish({ status: 'bad_return_shape', message: 'chart must be an object, got ' + kindOf(chart) });
      }
      let body;
      try {
        body = stringify({ transforms: transforms, chart: chart });
      } catch (e) {
        return finish({ status: 'exception', message: 'result is not serializable: ' + describe(e) });
      }
      return finish({ status: 'ok', result: body });
    },
  };
})
