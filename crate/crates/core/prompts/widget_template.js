function callback(event, chart) {
  // event.target is the input that changed; read other inputs with document.getElementById.
  // Edit chart in place. Push data transforms into transforms.
  const transforms = [];
  return [transforms, chart];
}
