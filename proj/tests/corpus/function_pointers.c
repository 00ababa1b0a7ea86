void (*handler)(int code);
int (*ops[4])(int, int);
int last_code;

void on_code(int code)
{
  last_code = code;
}

void install(void)
{
  handler = on_code;
  handler(last_code);
  if (ops[0])
    last_code = ops[0](1, 2);
}
