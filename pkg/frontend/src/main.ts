import { ServiceClient } from "./api.js";
import { AppController } from "./app.js";
import { AppView } from "./ui.js";

const base = window.location.origin;
const controller = new AppController(new ServiceClient(base));
const root = document.getElementById("app");
if (!root) throw new Error("missing #app root element");
void new AppView(root, controller).mount();
